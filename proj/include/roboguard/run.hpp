/// @file run.hpp
/// @brief Headless scenario runs into a run directory with fixed file names:
/// trace.jsonl, labels.jsonl, alarms.jsonl and eval.json, plus the resolved
/// scenario.yaml.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "roboguard/eval.hpp"
#include "roboguard/system.hpp"

namespace roboguard {

struct RunOptions {
    std::string scenario_path;
    /// Kinds to schedule in seeded slots, replacing the file's injections.
    /// "all" stands for every kind.
    std::vector<std::string> inject;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    // empty: detectors.yaml, envelope.yaml and grouping.yaml beside the scenario, when present
    std::string detectors_path;
    std::string envelope_path;
    std::string grouping_path;
    std::optional<bool> validity_filter;
    std::string snapshot_dir;
    int serve_port = -1;  // >= 0: serve the API for the length of the run (0: any free port)
};

struct RunSummary {
    ScenarioReport report;
    std::size_t alarms = 0;
    std::size_t presented = 0;
    std::int64_t duration_ms = 0;
    std::string trace_sha256;
};

std::vector<InjectionKind> parse_injection_list(const std::vector<std::string>& names);

/// Throws InvalidScenario when the scenario file is missing or invalid, and
/// InvalidConfig for unreadable configuration.
SystemConfig make_system_config(const RunOptions& opts);

/// Runs a scenario to its end, writing the trace as it goes.
RunSummary run_to_directory(const RunOptions& opts);

/// Evaluates run directories and writes eval.json to `out_path`.
EvalReport evaluate_directories(const std::vector<std::string>& dirs, const std::string& out_path, EvalConfig cfg = {});

}  // namespace roboguard
