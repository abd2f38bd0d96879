#include "roboguard/alarmdesk.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "roboguard/error.hpp"

namespace roboguard {

std::string_view to_string(Severity s) {
    switch (s) {
        case Severity::Info: return "info";
        case Severity::Warning: return "warning";
        case Severity::Critical: return "critical";
    }
    return "warning";
}

std::string_view to_string(AlarmState s) {
    switch (s) {
        case AlarmState::Raised: return "raised";
        case AlarmState::Presented: return "presented";
        case AlarmState::Dismissed: return "dismissed";
        case AlarmState::Confirmed: return "confirmed";
        case AlarmState::Suppressed: return "suppressed";
        case AlarmState::Escalated: return "escalated";
    }
    return "raised";
}

AlarmState alarm_state_from_string(std::string_view s) {
    for (auto st : {AlarmState::Raised, AlarmState::Presented, AlarmState::Dismissed, AlarmState::Confirmed,
                    AlarmState::Suppressed, AlarmState::Escalated})
        if (to_string(st) == s) return st;
    throw Error(ErrorCode::MalformedInput, "unknown alarm state '" + std::string(s) + "'");
}

FeedbackAction feedback_action_from_string(std::string_view s) {
    if (s == "dismiss") return FeedbackAction::Dismiss;
    if (s == "confirm") return FeedbackAction::Confirm;
    throw Error(ErrorCode::MalformedInput, "feedback action must be dismiss or confirm");
}

namespace {

Severity severity_from_string(std::string_view s) {
    for (auto v : {Severity::Info, Severity::Warning, Severity::Critical})
        if (to_string(v) == s) return v;
    throw Error(ErrorCode::MalformedInput, "unknown severity '" + std::string(s) + "'");
}

std::string join(const std::set<std::string>& xs) {
    std::string out;
    for (const auto& x : xs) {
        if (!out.empty()) out += ",";
        out += x;
    }
    return out;
}

}  // namespace

nlohmann::json to_json(const Alarm& a) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& t : a.history) hist.push_back({{"t_ms", t.t_ms}, {"state", to_string(t.state)}, {"reason", t.reason}});
    nlohmann::json j = {{"id", a.id},
                        {"t_ms", a.t_ms},
                        {"signature", {{"detector_id", a.signature.detector_id}, {"target", a.signature.target}, {"kind", a.signature.kind}}},
                        {"severity", to_string(a.severity)},
                        {"state", to_string(a.state)},
                        {"suppressed_reason", a.suppressed_reason},
                        {"last_raise_ms", a.last_raise_ms},
                        {"raise_count", a.raise_count},
                        {"score", std::isfinite(a.score) ? nlohmann::json(a.score) : nlohmann::json(nullptr)},
                        {"topics", a.topics},
                        {"source", a.source},
                        {"history", hist}};
    j["episode_of"] = a.episode_of ? nlohmann::json(*a.episode_of) : nlohmann::json(nullptr);
    return j;
}

Alarm alarm_from_json(const nlohmann::json& j) {
    try {
        Alarm a;
        a.id = j.at("id").get<std::uint64_t>();
        a.t_ms = j.at("t_ms").get<std::int64_t>();
        const auto& s = j.at("signature");
        a.signature = {s.at("detector_id").get<std::string>(), s.at("target").get<std::string>(), s.at("kind").get<std::string>()};
        a.severity = severity_from_string(j.at("severity").get<std::string>());
        a.state = alarm_state_from_string(j.at("state").get<std::string>());
        a.suppressed_reason = j.value("suppressed_reason", "");
        if (j.contains("episode_of") && !j.at("episode_of").is_null()) a.episode_of = j.at("episode_of").get<std::uint64_t>();
        a.last_raise_ms = j.value("last_raise_ms", a.t_ms);
        a.raise_count = j.value("raise_count", std::uint64_t{1});
        if (j.contains("score") && j.at("score").is_number()) a.score = j.at("score").get<double>();
        if (j.contains("topics")) a.topics = j.at("topics").get<std::set<std::string>>();
        if (j.contains("source")) a.source = j.at("source");
        if (j.contains("history"))
            for (const auto& t : j.at("history"))
                a.history.push_back({t.at("t_ms").get<std::int64_t>(), alarm_state_from_string(t.at("state").get<std::string>()),
                                     t.value("reason", "")});
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedInput, std::string("alarm record: ") + e.what());
    }
}

double posterior_mean(const SuppressionCounts& c) {
    return (1.0 + static_cast<double>(c.dismissed)) / (2.0 + static_cast<double>(c.dismissed + c.confirmed));
}

bool suppression_active(const SuppressionCounts& c, const AlarmDeskConfig& cfg) {
    return posterior_mean(c) > cfg.q && c.dismissed + c.confirmed >= cfg.n_min && c.confirmed == 0;
}

int adapt_threshold(std::size_t trailing_raises, const AlarmDeskConfig& cfg) {
    const auto h = static_cast<int>(std::lround(cfg.c * static_cast<double>(trailing_raises)));
    return std::clamp(h, cfg.h_min, cfg.h_max);
}

AlarmDesk::AlarmDesk(AlarmDeskConfig cfg) : cfg_(cfg) {
    if (cfg_.h < 1 || cfg_.h_min < 1 || cfg_.h_max < cfg_.h_min) throw Error(ErrorCode::InvalidConfig, "thresholds need 1 <= h_min <= h_max and h >= 1");
    if (cfg_.w_alarm_ms <= 0 || cfg_.half_life_ms <= 0) throw Error(ErrorCode::InvalidConfig, "windows must be positive");
}

void AlarmDesk::decay(SuppressionCounts& c, std::int64_t now) const {
    if (now <= c.decay_anchor_ms) return;
    const auto halvings = (now - c.decay_anchor_ms) / cfg_.half_life_ms;
    if (halvings <= 0) return;
    c.dismissed = halvings >= 64 ? 0 : c.dismissed >> halvings;
    c.confirmed = halvings >= 64 ? 0 : c.confirmed >> halvings;
    c.decay_anchor_ms += halvings * cfg_.half_life_ms;
}

Alarm AlarmDesk::raise(AlarmSignature sig, Severity sev, std::int64_t t, double score, std::set<std::string> topics,
                       nlohmann::json src) {
    std::vector<Alarm> changed;
    Alarm out;
    {
        std::lock_guard lock(mu_);
        now_ = std::max(now_, t);
        Alarm a;
        a.id = alarms_.size() + 1;
        a.t_ms = t;
        a.signature = sig;
        a.severity = sev;
        a.last_raise_ms = t;
        a.score = score;
        a.topics = std::move(topics);
        a.source = std::move(src);
        a.history.push_back({t, AlarmState::Raised, ""});

        auto& times = raises_[sig];
        while (!times.empty() && times.front() <= t - cfg_.w_alarm_ms) times.pop_front();
        const std::size_t trailing = times.size();
        times.push_back(t);

        std::string reason;
        if (sev != Severity::Critical) {
            auto open = open_.find(sig);
            if (cfg_.coalesce && open != open_.end()) {
                auto& parent = alarms_[open->second - 1];
                if (parent.state == AlarmState::Presented && t - parent.last_raise_ms <= cfg_.w_alarm_ms) {
                    parent.last_raise_ms = t;
                    parent.raise_count += 1;
                    a.episode_of = parent.id;
                    reason = "duplicate";
                    changed.push_back(parent);
                } else {
                    open_.erase(open);
                }
            }
            if (reason.empty()) {
                int h = cfg_.h;
                if (cfg_.dynamic) {
                    h = adapt_threshold(trailing, cfg_);
                    h_[sig] = h;
                }
                if (static_cast<int>(times.size()) < h) reason = "rate_threshold";
            }
            if (reason.empty()) {
                auto& c = model_[sig];
                decay(c, t);
                if (suppression_active(c, cfg_)) reason = "learned_model";
            }
        }
        if (reason.empty()) {
            a.state = AlarmState::Presented;
            a.history.push_back({t, AlarmState::Presented, ""});
            if (sev != Severity::Critical) open_[sig] = a.id;
        } else {
            a.state = AlarmState::Suppressed;
            a.suppressed_reason = reason;
            a.history.push_back({t, AlarmState::Suppressed, reason});
        }
        alarms_.push_back(a);
        out = a;
    }
    for (const auto& c : changed) notify(c);
    notify(out);
    return out;
}

Alarm AlarmDesk::ingest(const AnomalyEvent& e) {
    return raise({e.detector_id, e.target, std::string(to_string(e.kind))}, Severity::Warning, e.t_ms, e.score, e.topics,
                 to_json(e));
}

Alarm AlarmDesk::ingest(const AssumptionChange& c) {
    return raise({c.name, join(c.topics), "assumption"}, Severity::Info, c.t_ms, 0.0, c.topics, to_json(c));
}

Alarm AlarmDesk::ingest(const EStopDecision& d, std::set<std::string> topics) {
    std::set<std::string> dims;
    for (const auto& [name, _] : d.contributing) dims.insert(name);
    return raise({"envelope", join(dims), "estop"}, Severity::Critical, d.t_ms, d.accumulated_risk, std::move(topics), to_json(d));
}

Alarm AlarmDesk::escalate(const std::string& node, const std::string& signature, int restores, std::int64_t t_ms) {
    nlohmann::json src = {{"node", node}, {"fault_signature", signature}, {"restores", restores}};
    auto a = raise({"recovery", node, "escalation"}, Severity::Critical, t_ms, static_cast<double>(restores), {}, src);
    std::lock_guard lock(mu_);
    auto& stored = alarms_[a.id - 1];
    stored.state = AlarmState::Escalated;
    stored.history.push_back({t_ms, AlarmState::Escalated, signature});
    return stored;
}

Alarm AlarmDesk::feedback(std::uint64_t id, FeedbackAction action, std::optional<std::int64_t> t_ms) {
    Alarm out;
    {
        std::lock_guard lock(mu_);
        if (id == 0 || id > alarms_.size()) throw Error(ErrorCode::UnknownAlarm, "no alarm with id " + std::to_string(id));
        auto& a = alarms_[id - 1];
        if (a.state != AlarmState::Presented)
            throw Error(ErrorCode::AlreadyResolved, "alarm " + std::to_string(id) + " is " + std::string(to_string(a.state)));
        const std::int64_t t = t_ms.value_or(now_);
        now_ = std::max(now_, t);
        auto& c = model_[a.signature];
        decay(c, t);
        if (action == FeedbackAction::Dismiss) {
            c.dismissed += 1;
            a.state = AlarmState::Dismissed;
        } else {
            c.confirmed += 1;
            c.dismissed = 0;
            a.state = AlarmState::Confirmed;
        }
        c.decay_anchor_ms = t;
        a.history.push_back({t, a.state, ""});
        auto open = open_.find(a.signature);
        if (open != open_.end() && open->second == id) open_.erase(open);
        out = a;
    }
    notify(out);
    return out;
}

SuppressionCounts AlarmDesk::counts(const AlarmSignature& sig) const {
    std::lock_guard lock(mu_);
    auto it = model_.find(sig);
    SuppressionCounts c = it == model_.end() ? SuppressionCounts{} : it->second;
    decay(c, now_);
    return c;
}

bool AlarmDesk::suppressing(const AlarmSignature& sig) const { return suppression_active(counts(sig), cfg_); }

int AlarmDesk::current_h(const AlarmSignature& sig) const {
    std::lock_guard lock(mu_);
    auto it = h_.find(sig);
    return it == h_.end() ? (cfg_.dynamic ? cfg_.h_min : cfg_.h) : it->second;
}

std::optional<Alarm> AlarmDesk::get(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    if (id == 0 || id > alarms_.size()) return std::nullopt;
    return alarms_[id - 1];
}

std::vector<Alarm> AlarmDesk::alarms(std::optional<AlarmState> state) const {
    std::lock_guard lock(mu_);
    if (!state) return alarms_;
    std::vector<Alarm> out;
    for (const auto& a : alarms_)
        if (a.state == *state) out.push_back(a);
    return out;
}

std::vector<Alarm> AlarmDesk::presented() const {
    std::lock_guard lock(mu_);
    std::vector<Alarm> out;
    for (const auto& a : alarms_)
        if (std::any_of(a.history.begin(), a.history.end(), [](const auto& t) { return t.state == AlarmState::Presented; }))
            out.push_back(a);
    return out;
}

std::int64_t AlarmDesk::now_ms() const {
    std::lock_guard lock(mu_);
    return now_;
}

void AlarmDesk::on_change(Listener l) {
    std::lock_guard lock(mu_);
    listeners_.push_back(std::move(l));
}

void AlarmDesk::notify(const Alarm& a) {
    std::vector<Listener> ls;
    {
        std::lock_guard lock(mu_);
        ls = listeners_;
    }
    for (const auto& l : ls) l(a);
}

std::string AlarmDesk::log_jsonl() const {
    std::string out;
    for (const auto& a : alarms()) out += to_json(a).dump() + "\n";
    return out;
}

void AlarmDesk::write_log(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::SinkUnwritable, "cannot write alarm log " + path);
    f << log_jsonl();
}

nlohmann::json AlarmDesk::model_json() const {
    std::lock_guard lock(mu_);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [sig, stored] : model_) {
        auto c = stored;
        decay(c, now_);
        arr.push_back({{"signature", {{"detector_id", sig.detector_id}, {"target", sig.target}, {"kind", sig.kind}, {"key", sig.key()}}},
                       {"dismissed", c.dismissed},
                       {"confirmed", c.confirmed},
                       {"posterior_mean", posterior_mean(c)},
                       {"suppressing", suppression_active(c, cfg_)}});
    }
    return arr;
}

std::vector<Alarm> read_alarm_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MalformedInput, "cannot read alarm log " + path);
    std::vector<Alarm> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(alarm_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::MalformedInput, path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace roboguard
