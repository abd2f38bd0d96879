/// @file eval.hpp
/// @brief Scoring presented alarms against injection labels.
///
/// An injection is detected when an alarm is presented inside
/// [start - W, end + W] and implicates a topic the injection perturbs. W is one
/// feature window, the latency a tumbling window adds. A presented alarm that
/// detects nothing is a false alarm.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/alarmdesk.hpp"
#include "roboguard/simbot.hpp"
#include "roboguard/trace.hpp"

namespace roboguard {

struct RunArtifacts {
    std::string name;
    std::int64_t duration_ms = 0;
    std::vector<GroundTruthLabel> labels;
    std::vector<Alarm> alarms;
};

/// Reads trace.jsonl, labels.jsonl and alarms.jsonl from a run directory.
/// Throws MalformedInput.
RunArtifacts load_run(const std::string& dir);
std::vector<GroundTruthLabel> read_labels(const std::string& path);
void write_labels(const std::string& path, const std::vector<GroundTruthLabel>& labels);
/// Time covered by a trace: last t_ms + 1, or 0 when empty.
std::int64_t trace_duration_ms(const Trace& trace);

struct EvalConfig {
    std::int64_t window_ms = 1000;
};

struct KindStats {
    std::uint64_t injections = 0;
    std::uint64_t detected = 0;
    std::uint64_t alarmed = 0;  // expected_detection=false labels that drew an alarm
    std::optional<double> recall;
};

struct EvalReport {
    std::optional<double> recall;  // null without injections to detect
    double false_alarm_rate = 0.0;  // per minute
    std::uint64_t injections = 0;
    std::uint64_t detected = 0;
    std::uint64_t presented = 0;
    std::uint64_t false_alarms = 0;
    double minutes = 0.0;
    std::map<std::string, KindStats> per_kind;
    nlohmann::json runs = nlohmann::json::array();
};

nlohmann::json to_json(const EvalReport& r);
std::string format_table(const EvalReport& r);

/// Alarms that reached the operator, including those resolved since.
bool was_presented(const Alarm& a);
/// Whether the alarm was presented inside [lo_ms, hi_ms]. Only the presenting
/// raise counts: raises folded into an open episode never reach the operator
/// as new alarms, so a long episode does not speak for later injections.
bool alarm_overlaps(const Alarm& a, std::int64_t lo_ms, std::int64_t hi_ms);
bool alarm_matches(const Alarm& a, const GroundTruthLabel& label, std::int64_t window_ms);

EvalReport evaluate(const std::vector<RunArtifacts>& runs, EvalConfig cfg = {});

}  // namespace roboguard
