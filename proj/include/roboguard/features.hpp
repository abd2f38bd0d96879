/// @file features.hpp
/// @brief Tumbling-window message features in mergeable partial form.
///
/// A PartialAggregate carries per-topic counts, per-field moments and the
/// sorted arrival times of every topic in its window. Follow counts are
/// derived from the arrival times at finalize, which keeps the merge of
/// partials from different ingest sites exact even when the two topics of a
/// pair were observed at different sites.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/bus.hpp"

namespace roboguard {

struct Window {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;

    std::int64_t length_ms() const { return end_ms - start_ms; }
    bool contains(std::int64_t t) const { return start_ms <= t && t < end_ms; }
    bool operator==(const Window&) const = default;
};

struct FieldStats {
    std::uint64_t count = 0;
    double sum = 0.0;
    double sumsq = 0.0;
    double min = 0.0;
    double max = 0.0;

    void add(double x);
    void merge(const FieldStats& o);
    bool operator==(const FieldStats&) const = default;
};

using TopicPair = std::pair<std::string, std::string>;

struct PartialAggregate {
    Window window;
    std::int64_t lag_ms = 100;
    std::map<std::string, std::uint64_t> per_topic_count;  // known topics, zero counts included
    std::map<std::string, std::vector<std::int64_t>> arrivals;  // sorted t_ms per topic
    std::map<std::string, FieldStats> field_stats;             // key "topic.field"

    /// Per (a, b), a != b: number of a-messages followed by at least one
    /// b-message within (t_a, t_a + lag_ms] inside the window.
    std::map<TopicPair, std::uint64_t> follow_count() const;
    /// Number of a-messages considered as follow sources.
    std::map<std::string, std::uint64_t> source_count() const;

    bool operator==(const PartialAggregate&) const = default;
};

struct TimeBucket {
    int hour_of_day = 0;
    int day_of_week = 0;  // 0 = Sunday
    bool operator==(const TimeBucket&) const = default;
};

struct FieldSummary {
    std::uint64_t count = 0;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    double min = 0.0;
    double max = 0.0;
    bool operator==(const FieldSummary&) const = default;
};

struct FeatureFrame {
    Window window;
    std::map<std::string, double> per_topic_rate;
    double total_rate = 0.0;
    TimeBucket time_bucket;
    std::map<TopicPair, double> co_occurrence;
    std::map<std::string, FieldSummary> fields;  // key "topic.field"
    std::map<std::string, double> composites;    // group-level streams, filled by the hierarchy stage

    bool operator==(const FeatureFrame&) const = default;
};

struct FeatureConfig {
    std::int64_t window_ms = 1000;
    std::int64_t lag_ms = 100;
    std::int64_t origin_ms = 0;                // windows are [origin + k*window, origin + (k+1)*window)
    std::int64_t late_tolerance_ms = 0;        // late records within this are dropped and counted
    std::int64_t calendar_epoch_unix_ms = 0;   // wall-clock time of scenario t = 0
};

TimeBucket time_bucket_of(std::int64_t t_ms, std::int64_t calendar_epoch_unix_ms);

/// Field-wise sum. Throws WindowMismatch for different windows or lags.
PartialAggregate merge(const PartialAggregate& a, const PartialAggregate& b);

/// Throws ZeroWindow for an empty or inverted window.
FeatureFrame finalize(const PartialAggregate& p, std::int64_t calendar_epoch_unix_ms = 0);

/// Adds one delivered message to a partial. Rejected records are ignored.
/// With `include_values` false only the arrival counts, so a message whose
/// content failed validation still shows up in rates and co-occurrence.
void accumulate(PartialAggregate& p, const Message& msg, bool include_values = true);

/// Rolls tumbling windows over an ordered record stream.
class WindowAggregator {
public:
    explicit WindowAggregator(FeatureConfig cfg = {});

    /// Adds a record; returns partials of windows closed by its arrival.
    std::vector<PartialAggregate> ingest(const Message& msg, bool include_values = true);
    /// Closes every window that ends at or before `t_ms`.
    std::vector<PartialAggregate> advance_to(std::int64_t t_ms);
    /// Declares a topic so closed windows report its zero rate.
    void declare_topic(const std::string& topic);

    const FeatureConfig& config() const { return cfg_; }
    const PartialAggregate& current() const { return current_; }
    std::uint64_t late_dropped() const { return late_dropped_; }

    nlohmann::json save_state() const;
    void load_state(const nlohmann::json& j);

private:
    PartialAggregate fresh(std::int64_t start) const;

    FeatureConfig cfg_;
    std::set<std::string> known_;
    PartialAggregate current_;
    std::uint64_t late_dropped_ = 0;
};

/// WindowAggregator that finalizes each closed window.
class FeatureExtractor {
public:
    explicit FeatureExtractor(FeatureConfig cfg = {}) : agg_(cfg) {}

    std::vector<FeatureFrame> ingest(const Message& msg, bool include_values = true);
    std::vector<FeatureFrame> advance_to(std::int64_t t_ms);
    void declare_topic(const std::string& topic) { agg_.declare_topic(topic); }

    const FeatureConfig& config() const { return agg_.config(); }
    WindowAggregator& aggregator() { return agg_; }
    const WindowAggregator& aggregator() const { return agg_; }

private:
    std::vector<FeatureFrame> finish(std::vector<PartialAggregate> parts) const;
    WindowAggregator agg_;
};

/// Single-pass frames over a full record stream, windows from the first to
/// the last record (inclusive).
std::vector<FeatureFrame> extract_frames(const std::vector<Message>& records, FeatureConfig cfg = {});

// Feature selectors name one scalar stream of a frame:
//   rate:/topic  total_rate  mean|std|min|max|count:/topic.field
//   cooc:/a>/b  composite:<name>  hour  dow
std::optional<double> select_feature(const FeatureFrame& frame, std::string_view selector);
/// Topics a selector reads. Composite selectors resolve to nothing here.
std::set<std::string> selector_topics(std::string_view selector);

nlohmann::json to_json(const FeatureFrame& f);
FeatureFrame frame_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PartialAggregate& p);
PartialAggregate partial_from_json(const nlohmann::json& j);

}  // namespace roboguard
