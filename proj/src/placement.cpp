#include "roboguard/placement.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "roboguard/error.hpp"
#include "roboguard/trace.hpp"

namespace roboguard {

using json = nlohmann::json;

std::string_view to_string(PlacementMode m) {
    switch (m) {
        case PlacementMode::LocalOnly: return "local_only";
        case PlacementMode::HubSpoke: return "hub_spoke";
        case PlacementMode::LocalReduction: return "local_reduction";
        case PlacementMode::PeerToPeer: return "peer_to_peer";
    }
    return "local_reduction";
}

PlacementMode placement_mode_from_string(std::string_view s) {
    for (auto m : {PlacementMode::LocalOnly, PlacementMode::HubSpoke, PlacementMode::LocalReduction, PlacementMode::PeerToPeer})
        if (to_string(m) == s) return m;
    throw Error(ErrorCode::InvalidPlan, "unknown placement mode '" + std::string(s) + "'");
}

bool LinkModel::scheduled_up(std::int64_t t_ms) const {
    return std::none_of(outages.begin(), outages.end(), [&](const auto& o) { return t_ms >= o.first && t_ms < o.second; });
}

const SitePlan* PlacementPlan::hub() const {
    for (const auto& s : sites)
        if (s.hub) return &s;
    return nullptr;
}

const SitePlan* PlacementPlan::site(std::string_view name) const {
    for (const auto& s : sites)
        if (s.name == name) return &s;
    return nullptr;
}

const std::string& PlacementPlan::site_of(const std::string& topic) const {
    const SitePlan* best = nullptr;
    std::size_t best_len = 0;
    for (const auto& s : sites)
        for (const auto& pat : s.topics) {
            if (pat == topic) return s.name;
            if (!pat.empty() && pat.back() == '*') {
                const auto prefix = std::string_view(pat).substr(0, pat.size() - 1);
                if (topic.starts_with(prefix) && (best == nullptr || prefix.size() > best_len)) {
                    best = &s;
                    best_len = prefix.size();
                }
            }
        }
    if (best == nullptr) throw Error(ErrorCode::UnassignedTopic, "no site ingests '" + topic + "'");
    return best->name;
}

void validate_plan(const PlacementPlan& plan) {
    if (plan.mode == PlacementMode::PeerToPeer) throw Error(ErrorCode::InvalidPlan, "peer_to_peer placement is not implemented");
    if (plan.sites.empty()) throw Error(ErrorCode::InvalidPlan, "plan has no sites");
    std::set<std::string> names, topics;
    std::size_t hubs = 0;
    for (const auto& s : plan.sites) {
        if (s.name.empty() || !names.insert(s.name).second) throw Error(ErrorCode::InvalidPlan, "site names must be unique and non-empty");
        hubs += s.hub ? 1 : 0;
        for (const auto& t : s.topics)
            if (!topics.insert(t).second) throw Error(ErrorCode::InvalidPlan, "topic '" + t + "' assigned to more than one site");
        if (s.link.latency_ms < 0 || s.link.drop_p < 0 || s.link.drop_p > 1)
            throw Error(ErrorCode::InvalidPlan, "site '" + s.name + "' link needs latency >= 0 and drop_p in [0, 1]");
        for (const auto& [a, b] : s.link.outages)
            if (b <= a) throw Error(ErrorCode::InvalidPlan, "site '" + s.name + "' has an empty outage");
    }
    if (plan.mode != PlacementMode::LocalOnly && hubs != 1)
        throw Error(ErrorCode::InvalidPlan, "hub modes need exactly one hub, found " + std::to_string(hubs));
    if (hubs > 1) throw Error(ErrorCode::InvalidPlan, "at most one hub");
}

namespace {

LinkModel parse_link(const YAML::Node& n, LinkModel base) {
    if (!n) return base;
    base.latency_ms = n["latency_ms"].as<std::int64_t>(base.latency_ms);
    base.drop_p = n["drop_p"].as<double>(base.drop_p);
    if (n["outages"]) {
        base.outages.clear();
        for (const auto& o : n["outages"]) {
            if (!o.IsSequence() || o.size() != 2) throw Error(ErrorCode::InvalidPlan, "outages are [start_ms, end_ms] pairs");
            base.outages.emplace_back(o[0].as<std::int64_t>(), o[1].as<std::int64_t>());
        }
    }
    return base;
}

std::set<std::string> detector_topics(const DetectorConfig& c) {
    if (!c.topics.empty()) return c.topics;
    std::set<std::string> out;
    for (const auto& s : c.target) out.merge(selector_topics(s));
    if (!c.denominator.empty()) out.merge(selector_topics(c.denominator));
    return out;
}

json link_json(const LinkModel& l) {
    json o = json::array();
    for (const auto& [a, b] : l.outages) o.push_back({a, b});
    return {{"latency_ms", l.latency_ms}, {"drop_p", l.drop_p}, {"outages", o}};
}

}  // namespace

PlacementPlan parse_plan_yaml(std::string_view text) {
    PlacementPlan plan;
    try {
        YAML::Node root = YAML::Load(std::string(text));
        if (!root.IsMap()) throw Error(ErrorCode::InvalidPlan, "plan must be a mapping");
        plan.mode = placement_mode_from_string(root["mode"].as<std::string>("local_reduction"));
        plan.backfill_cap_windows = root["backfill_cap_windows"].as<std::size_t>(plan.backfill_cap_windows);
        plan.seed = root["seed"].as<std::uint64_t>(0);
        const LinkModel shared = parse_link(root["link"], {});
        if (!root["sites"] || !root["sites"].IsSequence()) throw Error(ErrorCode::InvalidPlan, "plan needs a 'sites' list");
        for (const auto& n : root["sites"]) {
            SitePlan s;
            s.name = n["name"].as<std::string>();
            s.hub = n["hub"].as<bool>(false);
            if (n["topics"]) s.topics = n["topics"].as<std::vector<std::string>>();
            s.link = parse_link(n["link"], shared);
            plan.sites.push_back(std::move(s));
        }
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::InvalidPlan, std::string("plan yaml: ") + e.what());
    }
    validate_plan(plan);
    return plan;
}

PlacementPlan load_plan_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidPlan, "cannot read plan file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_plan_yaml(ss.str());
}

json to_json(const PlacementPlan& plan) {
    json sites = json::array();
    for (const auto& s : plan.sites)
        sites.push_back({{"name", s.name}, {"hub", s.hub}, {"topics", s.topics}, {"link", link_json(s.link)}});
    return {{"mode", to_string(plan.mode)}, {"backfill_cap_windows", plan.backfill_cap_windows}, {"seed", plan.seed}, {"sites", sites}};
}

RouteResult route(const std::vector<Message>& records, const PlacementPlan& plan, const FeatureConfig& features) {
    validate_plan(plan);
    RouteResult r;
    std::map<std::string, WindowAggregator> aggs;
    for (const auto& s : plan.sites) {
        aggs.emplace(s.name, WindowAggregator(features));
        r.per_site[s.name];
    }
    const auto* hub = plan.hub();
    auto forward_partials = [&](const std::string& site, const std::vector<PartialAggregate>& ps) {
        if (plan.mode != PlacementMode::LocalReduction || (hub && hub->name == site)) return;
        for (const auto& p : ps) {
            ++r.forwarded_partials;
            r.forwarded_bytes += to_json(p).dump().size();
        }
    };
    for (const auto& m : records) {
        const auto& site = plan.site_of(m.topic);
        r.per_site[site].push_back(m);
        for (auto& [name, agg] : aggs) forward_partials(name, agg.advance_to(m.t_ms));
        aggs.at(site).ingest(m);
        if (plan.mode == PlacementMode::HubSpoke && !(hub && hub->name == site)) {
            ++r.forwarded_records;
            r.forwarded_bytes += encode_record(m).size();
        }
    }
    if (!records.empty()) {
        const auto end = aggs.begin()->second.current().window.end_ms;
        for (auto& [name, agg] : aggs) forward_partials(name, agg.advance_to(end));
        if (plan.mode != PlacementMode::LocalOnly)
            for (std::int64_t w = features.origin_ms; w < end; w += features.window_ms) r.merge_schedule.push_back(w);
    }
    return r;
}

json to_json(const PlacementMetrics& m) {
    return {{"forwarded_bytes", m.forwarded_bytes},
            {"control_bytes", m.control_bytes},
            {"forwarded_records", m.forwarded_records},
            {"forwarded_partials", m.forwarded_partials},
            {"merged_windows", m.merged_windows},
            {"incomplete_windows", m.incomplete_windows},
            {"dropped_partials", m.dropped_partials},
            {"dropped_records", m.dropped_records},
            {"dropped_in_transit", m.dropped_in_transit},
            {"backfilled_payloads", m.backfilled_payloads},
            {"fallback_seconds", m.fallback_seconds}};
}

json to_json(const DegradationState& s) {
    json sites = json::object();
    for (const auto& [n, st] : s.sites)
        sites[n] = {{"link_up", st.link_up}, {"fallback", st.fallback}, {"buffered_windows", st.buffered_windows}};
    return {{"mode", to_string(s.mode)}, {"sites", sites}, {"core_set", s.core_set}};
}

PlacementRunner::PlacementRunner(PlacementPlan plan, FeatureConfig features, std::vector<DetectorConfig> detectors,
                                 std::optional<EnvelopeConfig> envelope)
    : plan_(std::move(plan)), features_(features), next_merge_(features.origin_ms), now_(features.origin_ms) {
    validate_plan(plan_);
    for (std::size_t i = 0; i < plan_.sites.size(); ++i) {
        const auto& sp = plan_.sites[i];
        Site s{sp, WindowAggregator(features_), {}, std::nullopt, {}, false, true, false, 0, 0, {}, {}, {}, std::mt19937_64(plan_.seed * 1000003 + i)};
        for (const auto& d : detectors) {
            const auto topics = detector_topics(d);
            bool local = !topics.empty();
            for (const auto& t : topics) {
                try {
                    local = local && plan_.site_of(t) == sp.name;
                } catch (const Error&) {
                    local = false;
                }
            }
            if (local) {
                s.detectors.emplace_back(d);
                core_.insert(d.id);
            }
        }
        if (envelope) {
            Envelope local;
            for (const auto& dim : envelope->envelope.dims) {
                try {
                    if (plan_.site_of(dim.topic()) == sp.name) local.dims.push_back(dim);
                } catch (const Error&) {
                }
            }
            if (!local.dims.empty()) {
                RiskModel m = envelope->model;
                if (!m.weights.empty()) {
                    std::vector<double> w;
                    for (const auto& dim : local.dims)
                        for (std::size_t k = 0; k < envelope->envelope.dims.size(); ++k)
                            if (envelope->envelope.dims[k].name == dim.name && k < m.weights.size()) w.push_back(m.weights[k]);
                    m.weights = w;
                }
                s.envelope.emplace(local, m);
                core_.insert("envelope@" + sp.name);
            }
        }
        index_[sp.name] = i;
        sites_.push_back(std::move(s));
        hub_in_.push_back({WindowAggregator(features_), {}, {}, features_.origin_ms});
    }
    if (plan_.mode != PlacementMode::LocalOnly)
        for (auto& d : detectors) hub_detectors_.emplace_back(std::move(d));
}

std::int64_t PlacementRunner::window_of(std::int64_t t) const {
    const auto rel = t - features_.origin_ms;
    const auto k = rel >= 0 ? rel / features_.window_ms : (rel - features_.window_ms + 1) / features_.window_ms;
    return features_.origin_ms + k * features_.window_ms;
}

const std::vector<FeatureFrame>& PlacementRunner::site_frames(const std::string& site) const {
    auto it = index_.find(site);
    if (it == index_.end()) throw Error(ErrorCode::UnknownSite, "no site '" + site + "'");
    return sites_[it->second].frames;
}

void PlacementRunner::transmit(Site& s, LinkItem item, std::int64_t t) {
    const bool data = item.kind == LinkItem::Kind::Record || item.kind == LinkItem::Kind::Partial;
    std::uint64_t bytes = 0;
    switch (item.kind) {
        case LinkItem::Kind::Record: bytes = encode_record(item.record).size(); break;
        case LinkItem::Kind::Partial: bytes = to_json(item.partial).dump().size(); break;
        case LinkItem::Kind::Watermark: bytes = json({{"through_ms", item.through_ms}}).dump().size(); break;
        case LinkItem::Kind::Gap: bytes = json({{"gaps", item.gaps}}).dump().size(); break;
    }
    if (data) {
        metrics_.forwarded_bytes += bytes;
        if (item.kind == LinkItem::Kind::Record) ++metrics_.forwarded_records;
        else ++metrics_.forwarded_partials;
        if (s.plan.link.drop_p > 0 && std::bernoulli_distribution(s.plan.link.drop_p)(s.rng)) {
            ++metrics_.dropped_in_transit;
            return;
        }
    } else {
        metrics_.control_bytes += bytes;
    }
    item.arrive_ms = t + s.plan.link.latency_ms;
    s.in_flight.push_back(std::move(item));
}

void PlacementRunner::send(Site& s, LinkItem item, std::int64_t t) {
    if (plan_.mode == PlacementMode::LocalOnly) return;
    const auto i = index_.at(s.plan.name);
    if (s.plan.hub) {
        receive(i, std::move(item));
        return;
    }
    if (s.link_up) {
        transmit(s, std::move(item), t);
        return;
    }
    s.buffer.push_back(std::move(item));
    // evict whole windows, oldest first, once the buffer spans more than the cap
    std::set<std::int64_t> windows;
    for (const auto& b : s.buffer) windows.insert(b.window_start);
    while (windows.size() > plan_.backfill_cap_windows) {
        const auto oldest = *windows.begin();
        windows.erase(windows.begin());
        for (auto it = s.buffer.begin(); it != s.buffer.end();) {
            if (it->window_start != oldest) {
                ++it;
                continue;
            }
            if (it->kind == LinkItem::Kind::Record) ++metrics_.dropped_records;
            it = s.buffer.erase(it);
        }
        ++metrics_.dropped_partials;
        s.gaps.push_back(oldest);
    }
}

void PlacementRunner::receive(std::size_t site, LinkItem item) {
    auto& in = hub_in_[site];
    auto take = [&](std::vector<PartialAggregate> ps) {
        for (auto& p : ps)
            if (!in.gaps.count(p.window.start_ms)) in.partials[p.window.start_ms] = std::move(p);
    };
    switch (item.kind) {
        case LinkItem::Kind::Record:
            take(in.replica.ingest(item.record));
            break;
        case LinkItem::Kind::Partial:
            in.through = std::max(in.through, item.partial.window.end_ms);
            if (!in.gaps.count(item.partial.window.start_ms)) in.partials[item.partial.window.start_ms] = std::move(item.partial);
            break;
        case LinkItem::Kind::Watermark:
            if (plan_.mode == PlacementMode::HubSpoke) take(in.replica.advance_to(item.through_ms));
            in.through = std::max(in.through, item.through_ms);
            break;
        case LinkItem::Kind::Gap:
            for (auto g : item.gaps) in.gaps.insert(g);
            break;
    }
    merge_ready();
}

void PlacementRunner::merge_ready() {
    if (plan_.mode == PlacementMode::LocalOnly) return;
    while (true) {
        const auto end = next_merge_ + features_.window_ms;
        for (const auto& in : hub_in_)
            if (in.through < end) return;
        PartialAggregate merged;
        merged.window = {next_merge_, end};
        merged.lag_ms = features_.lag_ms;
        HubFrame hf;
        for (std::size_t i = 0; i < hub_in_.size(); ++i) {
            auto& in = hub_in_[i];
            auto it = in.partials.find(next_merge_);
            if (it == in.partials.end()) {
                hf.missing_sites.push_back(sites_[i].plan.name);
                continue;
            }
            merged = merge(merged, it->second);
            in.partials.erase(it);
        }
        hf.frame = finalize(merged, features_.calendar_epoch_unix_ms);
        ++metrics_.merged_windows;
        if (!hf.missing_sites.empty()) ++metrics_.incomplete_windows;
        for (auto& d : hub_detectors_)
            if (auto e = d.observe(hf.frame)) hub_events_.push_back(std::move(*e));
        hub_frames_.push_back(std::move(hf));
        next_merge_ = end;
    }
}

void PlacementRunner::deliver(std::int64_t t) {
    for (std::size_t i = 0; i < sites_.size(); ++i) {
        auto& q = sites_[i].in_flight;
        while (!q.empty() && q.front().arrive_ms <= t) {
            auto item = std::move(q.front());
            q.pop_front();
            receive(i, std::move(item));
        }
    }
}

void PlacementRunner::close_site_windows(Site& s, std::int64_t t) {
    for (auto& p : s.agg.advance_to(t)) {
        auto frame = finalize(p, features_.calendar_epoch_unix_ms);
        const bool deciding = plan_.mode == PlacementMode::LocalOnly || s.fallback;
        for (auto& d : s.detectors)
            if (auto e = d.observe(frame); e && deciding) site_events_.push_back({s.plan.name, std::move(*e)});
        s.frames.push_back(std::move(frame));
        LinkItem item;
        item.window_start = p.window.start_ms;
        if (plan_.mode == PlacementMode::LocalReduction) {
            item.kind = LinkItem::Kind::Partial;
            item.partial = std::move(p);
        } else {
            item.kind = LinkItem::Kind::Watermark;
            item.through_ms = p.window.end_ms;
        }
        send(s, std::move(item), p.window.end_ms);
    }
}

void PlacementRunner::step_links(std::int64_t t) {
    for (auto& s : sites_) {
        if (s.plan.hub) continue;
        // walk schedule edges between now_ and t so transitions carry their own timestamps
        std::vector<std::int64_t> edges;
        for (const auto& [a, b] : s.plan.link.outages)
            for (auto e : {a, b})
                if (e > now_ && e <= t) edges.push_back(e);
        edges.push_back(t);
        std::sort(edges.begin(), edges.end());
        for (auto e : edges) {
            const bool up = s.plan.link.scheduled_up(e) && !s.manual_down;
            if (up == s.link_up) continue;
            close_site_windows(s, e);
            s.link_up = up;
            if (!up) {
                s.fallback = true;
                s.fallback_since = e;
            } else {
                s.fallback = false;
                s.fallback_ms += e - s.fallback_since;
                if (!s.gaps.empty()) {
                    LinkItem gap;
                    gap.kind = LinkItem::Kind::Gap;
                    gap.gaps = std::move(s.gaps);
                    s.gaps.clear();
                    transmit(s, std::move(gap), e);
                }
                while (!s.buffer.empty()) {
                    ++metrics_.backfilled_payloads;
                    transmit(s, std::move(s.buffer.front()), e);
                    s.buffer.pop_front();
                }
            }
        }
    }
}

void PlacementRunner::advance_to(std::int64_t t) {
    if (t < now_) return;
    step_links(t);
    for (auto& s : sites_) close_site_windows(s, t);
    deliver(t);
    now_ = t;
}

void PlacementRunner::ingest(const Message& msg) {
    const auto& name = plan_.site_of(msg.topic);
    advance_to(msg.t_ms);
    auto& s = sites_[index_.at(name)];
    s.agg.ingest(msg);
    if (s.envelope)
        if (auto d = s.envelope->on_message(msg)) estops_.emplace_back(name, std::move(*d));
    if (plan_.mode == PlacementMode::HubSpoke) {
        LinkItem item;
        item.kind = LinkItem::Kind::Record;
        item.window_start = window_of(msg.t_ms);
        item.record = msg;
        send(s, std::move(item), msg.t_ms);
    }
}

void PlacementRunner::finish(std::int64_t t_end_ms) {
    advance_to(t_end_ms);
    std::int64_t horizon = t_end_ms;
    for (const auto& s : sites_) horizon = std::max(horizon, t_end_ms + s.plan.link.latency_ms);
    deliver(horizon);
}

DegradationState PlacementRunner::on_link_event(const std::string& site, bool up, std::int64_t t_ms) {
    auto it = index_.find(site);
    if (it == index_.end()) throw Error(ErrorCode::UnknownSite, "no site '" + site + "'");
    advance_to(std::max(t_ms, now_));
    sites_[it->second].manual_down = !up;
    step_links(now_);
    deliver(now_);
    return state();
}

PlacementMetrics PlacementRunner::metrics() const {
    auto m = metrics_;
    std::int64_t ms = 0;
    for (const auto& s : sites_) ms += s.fallback_ms + (s.fallback ? now_ - s.fallback_since : 0);
    m.fallback_seconds = static_cast<double>(ms) / 1000.0;
    return m;
}

DegradationState PlacementRunner::state() const {
    DegradationState st;
    st.mode = plan_.mode;
    st.core_set = core_;
    for (const auto& s : sites_) {
        std::set<std::int64_t> w;
        for (const auto& b : s.buffer) w.insert(b.window_start);
        st.sites[s.plan.name] = {s.link_up, s.fallback, w.size()};
    }
    return st;
}

}  // namespace roboguard
