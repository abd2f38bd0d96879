/// @file alarmdesk.hpp
/// @brief Alarm lifecycle: rate thresholding, episode coalescing and a
/// per-signature Beta-Bernoulli suppression model trained by operator feedback.
///
/// Every raise becomes an Alarm record. A raise is presented, or suppressed
/// with the rule that held it back; nothing is dropped silently. Critical
/// alarms skip every filter.

#pragma once

#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/detectors.hpp"
#include "roboguard/envelope.hpp"

namespace roboguard {

enum class Severity { Info, Warning, Critical };
enum class AlarmState { Raised, Presented, Dismissed, Confirmed, Suppressed, Escalated };
enum class FeedbackAction { Dismiss, Confirm };

std::string_view to_string(Severity s);
std::string_view to_string(AlarmState s);
AlarmState alarm_state_from_string(std::string_view s);
FeedbackAction feedback_action_from_string(std::string_view s);

struct AlarmSignature {
    std::string detector_id;
    std::string target;
    std::string kind;

    auto operator<=>(const AlarmSignature&) const = default;
    std::string key() const { return detector_id + "|" + target + "|" + kind; }
};

struct AlarmTransition {
    std::int64_t t_ms = 0;
    AlarmState state = AlarmState::Raised;
    std::string reason;
};

struct Alarm {
    std::uint64_t id = 0;
    std::int64_t t_ms = 0;
    AlarmSignature signature;
    Severity severity = Severity::Warning;
    AlarmState state = AlarmState::Raised;
    std::string suppressed_reason;  // rate_threshold | learned_model | duplicate
    std::optional<std::uint64_t> episode_of;  // presented alarm a duplicate was folded into
    std::int64_t last_raise_ms = 0;
    std::uint64_t raise_count = 1;
    double score = 0.0;
    std::set<std::string> topics;
    nlohmann::json source;
    std::vector<AlarmTransition> history;
};

nlohmann::json to_json(const Alarm& a);
Alarm alarm_from_json(const nlohmann::json& j);

struct SuppressionCounts {
    std::uint64_t dismissed = 0;  // alpha'
    std::uint64_t confirmed = 0;  // beta'
    std::int64_t decay_anchor_ms = 0;
};

struct AlarmDeskConfig {
    std::int64_t w_alarm_ms = 10000;
    int h = 1;
    bool dynamic = false;
    int h_min = 1;
    int h_max = 10;
    double c = 0.5;
    double q = 0.8;
    std::uint64_t n_min = 4;
    std::int64_t half_life_ms = 3'600'000;
    bool coalesce = true;  // fold raises into an open presented alarm of the same signature
};

/// (1 + dismissed) / (2 + dismissed + confirmed)
double posterior_mean(const SuppressionCounts& c);
bool suppression_active(const SuppressionCounts& c, const AlarmDeskConfig& cfg);
/// clamp(round(c * trailing_raises), h_min, h_max)
int adapt_threshold(std::size_t trailing_raises, const AlarmDeskConfig& cfg);

class AlarmDesk {
public:
    using Listener = std::function<void(const Alarm&)>;

    explicit AlarmDesk(AlarmDeskConfig cfg = {});

    Alarm ingest(const AnomalyEvent& e);
    Alarm ingest(const AssumptionChange& c);
    /// `topics` are the source topics of the contributing dimensions.
    Alarm ingest(const EStopDecision& d, std::set<std::string> topics = {});
    Alarm escalate(const std::string& node, const std::string& signature, int restores, std::int64_t t_ms);

    /// Throws UnknownAlarm, or AlreadyResolved for alarms not in presented state.
    Alarm feedback(std::uint64_t id, FeedbackAction action, std::optional<std::int64_t> t_ms = std::nullopt);

    SuppressionCounts counts(const AlarmSignature& sig) const;
    bool suppressing(const AlarmSignature& sig) const;
    int current_h(const AlarmSignature& sig) const;

    std::optional<Alarm> get(std::uint64_t id) const;
    std::vector<Alarm> alarms(std::optional<AlarmState> state = std::nullopt) const;
    std::vector<Alarm> presented() const;
    std::int64_t now_ms() const;

    /// Called after every state change, outside the desk lock.
    void on_change(Listener l);

    const AlarmDeskConfig& config() const { return cfg_; }
    std::string log_jsonl() const;
    void write_log(const std::string& path) const;

    nlohmann::json model_json() const;

private:
    Alarm raise(AlarmSignature sig, Severity sev, std::int64_t t, double score, std::set<std::string> topics, nlohmann::json src);
    void decay(SuppressionCounts& c, std::int64_t now) const;
    void notify(const Alarm& a);

    AlarmDeskConfig cfg_;
    mutable std::mutex mu_;
    std::vector<Alarm> alarms_;  // index = id - 1
    std::map<AlarmSignature, SuppressionCounts> model_;
    std::map<AlarmSignature, std::deque<std::int64_t>> raises_;
    std::map<AlarmSignature, int> h_;
    std::map<AlarmSignature, std::uint64_t> open_;  // presented alarm per signature
    std::int64_t now_ = 0;
    std::vector<Listener> listeners_;
};

/// Reads an alarm log written by AlarmDesk::write_log. Throws MalformedInput.
std::vector<Alarm> read_alarm_log(const std::string& path);

}  // namespace roboguard
