/// @file pipeline.hpp
/// @brief The detection stack over one ordered message stream: validity
/// filter, windowed features, group composites, detectors, assumptions, the
/// envelope monitor and the alarm desk.
///
/// The pipeline owns no bus and no clock. Feed it messages in time order and
/// it reports what each message caused, so the same stack serves live runs
/// and trace replays.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/alarmdesk.hpp"
#include "roboguard/detectors.hpp"
#include "roboguard/envelope.hpp"
#include "roboguard/features.hpp"
#include "roboguard/hierarchy.hpp"

namespace roboguard {

struct PipelineConfig {
    FeatureConfig features;
    DetectorSuiteConfig detectors;
    std::optional<EnvelopeConfig> envelope;
    HierarchyConfig hierarchy;
    AlarmDeskConfig alarms;
    /// On: content of a message that failed validation feeds neither value
    /// features nor the envelope; its arrival still counts.
    bool validity_filter = true;
    std::size_t frame_history = 600;
};

/// Reads the optional `features`, `alarms` and `validity_filter` keys of a
/// detector file. Throws InvalidConfig.
void apply_pipeline_options(PipelineConfig& cfg, std::string_view yaml_text);

/// Loads the detector (with its pipeline options), envelope and grouping
/// files; empty paths are skipped.
PipelineConfig load_pipeline_config(const std::string& detectors_path, const std::string& envelope_path,
                                    const std::string& grouping_path);

struct PipelineStep {
    std::vector<FeatureFrame> frames;
    std::vector<AnomalyEvent> events;
    std::vector<AssumptionChange> changes;
    std::optional<EStopDecision> estop;
    std::vector<Alarm> alarms;  // raised by this step, in raise order
};

struct PipelineCounters {
    std::uint64_t messages = 0;
    std::uint64_t invalid_messages = 0;  // delivered with a validity flag
    std::uint64_t frames = 0;
    std::uint64_t events = 0;
    std::uint64_t assumption_changes = 0;
    std::uint64_t estops = 0;
    std::uint64_t paused_frames = 0;  // frames that skipped detection
};

nlohmann::json to_json(const PipelineCounters& c);

class DetectionPipeline {
public:
    explicit DetectionPipeline(PipelineConfig cfg);

    /// Rebuilds the system graph when the directory changed.
    bool refresh(const BusDirectory& directory);

    PipelineStep process(const Message& msg);
    /// Closes every window ending at or before `t_ms`.
    PipelineStep advance_to(std::int64_t t_ms);

    /// Paused detection keeps computing frames and keeps the envelope live.
    void set_paused(bool paused) { paused_ = paused; }
    bool paused() const { return paused_; }

    AlarmDesk& desk() { return desk_; }
    const AlarmDesk& desk() const { return desk_; }
    EnvelopeMonitor* envelope() { return envelope_ ? envelope_.get() : nullptr; }
    const EnvelopeMonitor* envelope() const { return envelope_ ? envelope_.get() : nullptr; }
    const Hierarchy& hierarchy() const { return hierarchy_; }
    const PipelineConfig& config() const { return cfg_; }
    const PipelineCounters& counters() const { return counters_; }
    const std::vector<Detector>& detectors() const { return detectors_; }

    /// Most recent frames, oldest first; with a topic, only frames that saw it.
    std::vector<FeatureFrame> frames(const std::optional<std::string>& topic = std::nullopt, std::size_t limit = 0) const;

    /// Topics the detectors and assumptions read.
    std::set<std::string> detector_topics() const;
    /// Topics the envelope dimensions read.
    std::set<std::string> envelope_topics() const;
    /// Source topics of the named envelope dimensions.
    std::set<std::string> dim_topics(const std::set<std::string>& dims) const;

    /// Detector baselines and assumption states.
    nlohmann::json save_detectors() const;
    void load_detectors(const nlohmann::json& j);

    void reset_envelope();

private:
    void on_frames(std::vector<FeatureFrame> frames, PipelineStep& out);
    void raise(PipelineStep& out, Alarm a);

    PipelineConfig cfg_;
    FeatureExtractor extractor_;
    Hierarchy hierarchy_;
    std::vector<Detector> detectors_;
    AssumptionSet assumptions_;
    std::unique_ptr<EnvelopeMonitor> envelope_;
    AlarmDesk desk_;
    std::deque<FeatureFrame> history_;
    PipelineCounters counters_;
    bool paused_ = false;
};

}  // namespace roboguard
