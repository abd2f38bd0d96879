#include "roboguard/recovery.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "roboguard/error.hpp"

namespace roboguard {

namespace fs = std::filesystem;
using json = nlohmann::json;

json to_json(const Snapshot& s) {
    return {{"version", 1}, {"node", s.node}, {"t_ms", s.t_ms}, {"health_ms", s.health_ms}, {"state", s.state}};
}

Snapshot snapshot_from_json(const json& j) {
    try {
        if (j.value("version", 0) != 1) throw Error(ErrorCode::MalformedInput, "unsupported snapshot version");
        return {j.at("node").get<std::string>(), j.at("t_ms").get<std::int64_t>(), j.at("state"),
                j.value("health_ms", std::int64_t{0})};
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedInput, std::string("snapshot: ") + e.what());
    }
}

json to_json(const RestoreReport& r) {
    return {{"node", r.node},
            {"signature", {{"node", r.signature.node}, {"detector_id", r.signature.detector_id}, {"kind", r.signature.kind}}},
            {"restored", r.restored},
            {"escalated", r.escalated},
            {"restores_in_window", r.restores_in_window},
            {"snapshot_t_ms", r.snapshot_t_ms}};
}

CycleGuard::CycleGuard(int k_max, std::int64_t w_cycle_ms) : k_max_(k_max), w_cycle_ms_(w_cycle_ms) {
    if (k_max < 1 || w_cycle_ms <= 0) throw Error(ErrorCode::InvalidConfig, "cycle guard needs k_max >= 1 and a positive window");
}

CycleGuard::Verdict CycleGuard::attempt(const FaultSignature& sig, std::int64_t t_ms) {
    if (tripped_.count(sig)) return Verdict::Disabled;
    auto& h = history_[sig];
    while (!h.empty() && h.front() <= t_ms - w_cycle_ms_) h.pop_front();
    if (static_cast<int>(h.size()) >= k_max_) {
        tripped_.insert(sig);
        return Verdict::Tripped;
    }
    h.push_back(t_ms);
    return Verdict::Allowed;
}

bool CycleGuard::disabled(const FaultSignature& sig) const { return tripped_.count(sig) > 0; }

int CycleGuard::restores_in_window(const FaultSignature& sig, std::int64_t t_ms) const {
    auto it = history_.find(sig);
    if (it == history_.end()) return 0;
    return static_cast<int>(std::count_if(it->second.begin(), it->second.end(), [&](auto t) { return t > t_ms - w_cycle_ms_; }));
}

void CycleGuard::reset(const FaultSignature& sig) {
    tripped_.erase(sig);
    history_.erase(sig);
}

json CycleGuard::to_json() const {
    json arr = json::array();
    for (const auto& [sig, h] : history_)
        arr.push_back({{"signature", sig.key()}, {"restores", std::vector<std::int64_t>(h.begin(), h.end())},
                       {"tripped", tripped_.count(sig) > 0}});
    return {{"k_max", k_max_}, {"w_cycle_ms", w_cycle_ms_}, {"signatures", arr}};
}

RecoveryManager::RecoveryManager(RecoveryConfig cfg) : cfg_(std::move(cfg)), guard_(cfg_.k_max, cfg_.w_cycle_ms) {
    if (cfg_.health_window_ms < 0) throw Error(ErrorCode::InvalidConfig, "health window must be non-negative");
}

void RecoveryManager::register_node(const std::string& node, NodeHooks hooks) {
    if (!hooks.save || !hooks.load) throw Error(ErrorCode::InvalidConfig, "node '" + node + "' needs save and load hooks");
    std::lock_guard lock(mu_);
    hooks_[node] = std::move(hooks);
}

std::vector<std::string> RecoveryManager::nodes() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [n, _] : hooks_) out.push_back(n);
    return out;
}

void RecoveryManager::note_anomaly(const std::string& node, std::int64_t t_ms) {
    std::lock_guard lock(mu_);
    auto& last = last_anomaly_[node];
    last = std::max(last, t_ms);
}

bool RecoveryManager::healthy(const std::string& node, std::int64_t t_ms) const {
    std::lock_guard lock(mu_);
    auto it = last_anomaly_.find(node);
    return it == last_anomaly_.end() || t_ms - it->second >= cfg_.health_window_ms;
}

Snapshot RecoveryManager::take_snapshot(const std::string& node, std::int64_t t_ms) {
    NodeHooks hooks;
    std::int64_t health = t_ms;
    {
        std::lock_guard lock(mu_);
        auto h = hooks_.find(node);
        if (h == hooks_.end()) throw Error(ErrorCode::UnknownNode, "no node '" + node + "'");
        auto a = last_anomaly_.find(node);
        if (a != last_anomaly_.end()) {
            health = t_ms - a->second;
            if (health < cfg_.health_window_ms)
                throw Error(ErrorCode::NodeUnhealthy, "node '" + node + "' had an anomaly " + std::to_string(health) + " ms ago");
        }
        hooks = h->second;
    }
    Snapshot s{node, t_ms, hooks.save(), health};
    if (!cfg_.snapshot_dir.empty()) {
        const auto dir = fs::path(cfg_.snapshot_dir) / node;
        std::error_code ec;
        fs::create_directories(dir, ec);
        std::ofstream f(dir / (std::to_string(t_ms) + ".json"), std::ios::trunc);
        if (!f) throw Error(ErrorCode::SinkUnwritable, "cannot write snapshot under " + dir.string());
        f << roboguard::to_json(s).dump() << "\n";
    }
    std::lock_guard lock(mu_);
    latest_[node] = s;
    return s;
}

std::optional<Snapshot> RecoveryManager::latest(const std::string& node) const {
    std::lock_guard lock(mu_);
    auto it = latest_.find(node);
    if (it == latest_.end()) return std::nullopt;
    return it->second;
}

RestoreReport RecoveryManager::restore(const std::string& node, const FaultSignature& sig, std::int64_t t_ms) {
    RestoreReport r;
    r.node = node;
    r.signature = sig;
    NodeHooks hooks;
    Snapshot snap;
    {
        std::lock_guard lock(mu_);
        auto h = hooks_.find(node);
        if (h == hooks_.end()) throw Error(ErrorCode::UnknownNode, "no node '" + node + "'");
        auto s = latest_.find(node);
        if (s == latest_.end()) throw Error(ErrorCode::NoSnapshot, "no snapshot of '" + node + "'");
        const auto verdict = guard_.attempt(sig, t_ms);
        r.restores_in_window = guard_.restores_in_window(sig, t_ms);
        if (verdict == CycleGuard::Verdict::Disabled)
            throw Error(ErrorCode::CycleGuardTripped, "automatic restore disabled for " + sig.key());
        if (verdict == CycleGuard::Verdict::Tripped) {
            r.escalated = true;
        } else {
            hooks = h->second;
            snap = s->second;
        }
    }
    if (r.escalated) {
        std::vector<EscalationHandler> hs;
        {
            std::lock_guard lock(mu_);
            hs = escalation_;
        }
        for (const auto& h : hs) h(sig, r.restores_in_window, t_ms);
        return r;
    }
    hooks.load(snap.state);
    r.restored = true;
    r.snapshot_t_ms = snap.t_ms;
    return r;
}

void RecoveryManager::on_escalation(EscalationHandler h) {
    std::lock_guard lock(mu_);
    escalation_.push_back(std::move(h));
}

std::size_t RecoveryManager::load_persisted() {
    if (cfg_.snapshot_dir.empty()) return 0;
    std::size_t loaded = 0;
    for (const auto& node : nodes()) {
        const auto dir = fs::path(cfg_.snapshot_dir) / node;
        std::error_code ec;
        if (!fs::is_directory(dir, ec)) continue;
        std::optional<Snapshot> best;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() != ".json") continue;
            std::ifstream f(entry.path());
            json j;
            try {
                j = json::parse(f);
            } catch (const json::exception& e) {
                throw Error(ErrorCode::MalformedInput, entry.path().string() + ": " + e.what());
            }
            auto s = snapshot_from_json(j);
            if (!best || s.t_ms > best->t_ms) best = std::move(s);
        }
        if (best) {
            std::lock_guard lock(mu_);
            latest_[node] = *best;
            ++loaded;
        }
    }
    return loaded;
}

json RecoveryManager::to_json() const {
    std::lock_guard lock(mu_);
    json snaps = json::object();
    for (const auto& [n, s] : latest_) snaps[n] = {{"t_ms", s.t_ms}, {"health_ms", s.health_ms}};
    json names = json::array();
    for (const auto& [n, _] : hooks_) names.push_back(n);
    return {{"nodes", names}, {"snapshots", snaps}, {"cycle_guard", guard_.to_json()}};
}

MonitorNode::MonitorNode(std::string name, FeatureConfig features, std::vector<DetectorConfig> detectors, double rate_scale)
    : name_(std::move(name)), extractor_(features), scale_(rate_scale) {
    if (rate_scale <= 0) throw Error(ErrorCode::InvalidConfig, "rate scale must be positive");
    for (auto& d : detectors) detectors_.emplace_back(std::move(d));
}

std::vector<MonitorNode::Output> MonitorNode::finish(std::vector<FeatureFrame> frames) {
    std::vector<Output> out;
    for (auto& f : frames) {
        if (scale_ != 1.0) {
            for (auto& [_, r] : f.per_topic_rate) r *= scale_;
            f.total_rate *= scale_;
        }
        Output o{std::move(f), {}, name_, degraded_next_};
        degraded_next_ = false;
        for (auto& d : detectors_)
            if (auto e = d.observe(o.frame)) o.events.push_back(std::move(*e));
        ++frames_;
        out.push_back(std::move(o));
    }
    return out;
}

std::vector<MonitorNode::Output> MonitorNode::ingest(const Message& msg) {
    if (poisoned_) return finish(extractor_.advance_to(msg.t_ms));
    ++processed_;
    return finish(extractor_.ingest(msg));
}

std::vector<MonitorNode::Output> MonitorNode::advance_to(std::int64_t t_ms) { return finish(extractor_.advance_to(t_ms)); }

json MonitorNode::save_state() const {
    json dets = json::array();
    for (const auto& d : detectors_) dets.push_back(d.save_state());
    return {{"features", extractor_.aggregator().save_state()}, {"detectors", dets}, {"processed", processed_}, {"frames", frames_}};
}

void MonitorNode::load_state(const json& j) {
    const auto& dets = j.at("detectors");
    if (dets.size() != detectors_.size()) throw Error(ErrorCode::MalformedInput, "detector count differs from snapshot");
    extractor_.aggregator().load_state(j.at("features"));
    for (std::size_t i = 0; i < detectors_.size(); ++i) detectors_[i].load_state(dets[i]);
    processed_ = j.at("processed").get<std::uint64_t>();
    frames_ = j.at("frames").get<std::uint64_t>();
}

bool shadow_receives(std::uint64_t index, int d) { return index > 0 && index % static_cast<std::uint64_t>(d) == 0; }

ShadowPair::ShadowPair(ShadowSpec spec, FeatureConfig features, std::vector<DetectorConfig> detectors)
    : spec_(std::move(spec)), features_(features), detectors_(std::move(detectors)) {
    if (spec_.d < 2) throw Error(ErrorCode::InvalidConfig, "shadow divisor must be at least 2");
    serving_ = std::make_unique<MonitorNode>(spec_.primary, features_, detectors_, 1.0);
    shadow_ = std::make_unique<MonitorNode>(spec_.primary + ".shadow", features_, detectors_, spec_.d);
}

std::vector<MonitorNode::Output> ShadowPair::ingest(const Message& msg) {
    std::lock_guard lock(mu_);
    std::vector<MonitorNode::Output> out;
    if (serving_decimated_ && msg.t_ms >= full_rate_from_) {
        serving_->mark_degraded();
        out = serving_->advance_to(msg.t_ms);
        serving_->set_rate_scale(1.0);
        serving_decimated_ = false;
    }
    ++index_;
    const bool to_shadow = shadow_receives(index_, spec_.d);
    if (to_shadow) {
        shadow_inputs_.push_back(index_);
        shadow_->ingest(msg);
    } else {
        shadow_->advance_to(msg.t_ms);
    }
    if (!serving_decimated_ || to_shadow) {
        auto more = serving_->ingest(msg);
        out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    } else {
        auto more = serving_->advance_to(msg.t_ms);
        out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    }
    return out;
}

std::vector<MonitorNode::Output> ShadowPair::advance_to(std::int64_t t_ms) {
    std::lock_guard lock(mu_);
    std::vector<MonitorNode::Output> out;
    if (serving_decimated_ && t_ms >= full_rate_from_) {
        serving_->mark_degraded();
        out = serving_->advance_to(full_rate_from_);
        serving_->set_rate_scale(1.0);
        serving_decimated_ = false;
    }
    shadow_->advance_to(t_ms);
    auto more = serving_->advance_to(t_ms);
    out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    return out;
}

bool ShadowPair::shadow_warm() const {
    std::lock_guard lock(mu_);
    return shadow_->frames() >= 1;
}

PromotionReport ShadowPair::promote(std::int64_t t_ms) {
    std::lock_guard lock(mu_);
    if (shadow_->frames() < 1) throw Error(ErrorCode::ShadowCold, "shadow of '" + spec_.primary + "' has not finished a window");
    const auto w = features_.window_ms;
    const auto k = (t_ms - features_.origin_ms) >= 0 ? (t_ms - features_.origin_ms) / w : ((t_ms - features_.origin_ms) - w + 1) / w;
    PromotionReport r;
    r.promoted = shadow_->name();
    r.demoted = serving_->name();
    r.requested_ms = t_ms;
    r.full_rate_from_ms = features_.origin_ms + (k + 1) * w;

    // the demoted node restarts as the shadow from the promoted state
    auto restarted = std::make_unique<MonitorNode>(serving_->name(), features_, detectors_, spec_.d);
    restarted->load_state(shadow_->save_state());
    restarted->set_rate_scale(spec_.d);
    serving_ = std::move(shadow_);
    shadow_ = std::move(restarted);
    serving_decimated_ = true;
    full_rate_from_ = r.full_rate_from_ms;
    return r;
}

}  // namespace roboguard
