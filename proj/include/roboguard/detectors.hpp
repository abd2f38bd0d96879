/// @file detectors.hpp
/// @brief Extreme, isolated and abnormal detectors over feature frames, plus
/// the validity filter and the assumption monitor.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/bus.hpp"
#include "roboguard/features.hpp"

namespace roboguard {

enum class DetectorKind { Extreme, Isolated, Abnormal };

std::string_view to_string(DetectorKind k);
DetectorKind detector_kind_from_string(std::string_view s);

struct DetectorConfig {
    std::string id;
    DetectorKind kind = DetectorKind::Extreme;
    std::vector<std::string> target;  // one selector, or several forming the vector of an isolated detector
    double t = 3.0;
    int n = 0;
    std::size_t baseline_window_count = 10;
    double min_std = 1e-9;  // floor on the baseline standard deviation
    // abnormal kind: target / denominator against expected_ratio +- band
    std::string denominator;
    std::optional<double> expected_ratio;  // learned as the baseline mean ratio when absent
    double band = 0.2;
    std::set<std::string> topics;  // topics an event implicates; derived from selectors when empty

    std::string target_name() const;
};

void validate_detector(const DetectorConfig& c);

struct AnomalyEvent {
    std::int64_t t_ms = 0;  // start of the window that fired
    std::int64_t window_end_ms = 0;
    std::string detector_id;
    std::string target;
    DetectorKind kind = DetectorKind::Extreme;
    double score = 0.0;
    std::map<std::string, double> evidence;
    std::set<std::string> topics;
};

struct AssumptionChange {
    std::int64_t t_ms = 0;
    std::string name;
    bool value = true;
    std::optional<double> observed;
    std::set<std::string> topics;
};

nlohmann::json to_json(const AnomalyEvent& e);
nlohmann::json to_json(const AssumptionChange& c);

/// Rolling mean and population variance over the last `capacity` values.
class Baseline {
public:
    explicit Baseline(std::size_t capacity = 10) : capacity_(capacity) {}
    void push(double x);
    std::size_t size() const { return values_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool full() const { return values_.size() >= capacity_; }
    double mean() const;
    double variance() const;
    double stddev() const;
    const std::deque<double>& values() const { return values_; }

private:
    std::size_t capacity_;
    std::deque<double> values_;
};

struct BaselineStats {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;
};

BaselineStats stats_of(const Baseline& b);

/// |z| > t with z = (x - mean) / max(std, min_std). Fewer than two baseline
/// frames is warm-up and never fires.
std::optional<AnomalyEvent> score_extreme(double x, const BaselineStats& baseline, const DetectorConfig& config,
                                          std::int64_t t_ms = 0);

/// Fires when at most n history points lie within distance t of `point`;
/// score is the distance to the (n+1)-th nearest neighbour.
std::optional<AnomalyEvent> score_isolated(const std::vector<double>& point, const std::vector<std::vector<double>>& history,
                                           const DetectorConfig& config, std::int64_t t_ms = 0);

struct RatioModel {
    double expected = 1.0;
    double band = 0.2;
};

struct AbnormalResult {
    std::optional<AnomalyEvent> event;
    bool ratio_defined = true;
    std::optional<double> ratio;
};

AbnormalResult score_abnormal(double numerator, double denominator, const RatioModel& model, const DetectorConfig& config,
                              std::int64_t t_ms = 0);
AbnormalResult score_abnormal(const FeatureFrame& frame, const DetectorConfig& config, const RatioModel& model);

struct ValidityResult {
    bool valid = true;
    std::string field;
    double value = 0.0;
};

ValidityResult filter_validity(const Message& msg, const TopicSchema& schema);

/// Stateful detector over an ordered frame stream. Frames that fire never
/// enter the baseline.
class Detector {
public:
    explicit Detector(DetectorConfig config);

    std::optional<AnomalyEvent> observe(const FeatureFrame& frame);
    /// Ratio-defined flips of an abnormal detector since the last call.
    std::vector<AssumptionChange> take_notes();

    const DetectorConfig& config() const { return cfg_; }
    std::size_t baseline_size() const;
    bool warmed_up() const;

    nlohmann::json save_state() const;
    void load_state(const nlohmann::json& j);

private:
    std::optional<std::vector<double>> read(const FeatureFrame& f) const;

    DetectorConfig cfg_;
    Baseline scalar_;
    std::deque<std::vector<double>> history_;
    bool ratio_defined_ = true;
    std::vector<AssumptionChange> notes_;
};

enum class CompareOp { Lt, Le, Gt, Ge, Eq, Ne };

struct AssumptionSpec {
    std::string name;
    std::string selector;
    CompareOp op = CompareOp::Gt;
    double value = 0.0;
    int min_hold = 1;
};

/// Parses "rate(/cmd_vel) > 0" or "rate:/cmd_vel > 0".
AssumptionSpec parse_assumption(const std::string& name, std::string_view expr, int min_hold = 1);
std::string to_string(const AssumptionSpec& a);

struct AssumptionState {
    AssumptionSpec spec;
    bool initialized = false;
    bool truth = true;
    std::int64_t last_change_ms = 0;
    bool candidate = true;
    int candidate_run = 0;
    std::int64_t candidate_since = 0;
};

/// Predicates over frames. The first evaluation sets the state silently; a
/// flip is reported once the new value has held for min_hold frames, stamped
/// with the first frame of the run. Missing features evaluate false.
class AssumptionSet {
public:
    void add(AssumptionSpec spec);
    std::vector<AssumptionChange> check(const FeatureFrame& frame);
    const std::vector<AssumptionState>& states() const { return states_; }
    bool empty() const { return states_.empty(); }

    nlohmann::json save_state() const;
    void load_state(const nlohmann::json& j);

private:
    std::vector<AssumptionState> states_;
};

std::vector<AssumptionChange> check_assumptions(const FeatureFrame& frame, AssumptionSet& assumptions);

struct DetectorSuiteConfig {
    std::vector<DetectorConfig> detectors;
    std::vector<AssumptionSpec> assumptions;
};

DetectorSuiteConfig parse_detector_yaml(std::string_view text);
DetectorSuiteConfig load_detector_file(const std::string& path);
nlohmann::json to_json(const DetectorConfig& c);

}  // namespace roboguard
