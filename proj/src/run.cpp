#include "roboguard/run.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "roboguard/error.hpp"
#include "roboguard/gateway.hpp"

namespace roboguard {

namespace fs = std::filesystem;

namespace {

std::string beside(const std::string& scenario, const std::string& explicit_path, const char* name) {
    if (!explicit_path.empty()) return explicit_path;
    const auto p = fs::path(scenario).parent_path() / name;
    return fs::exists(p) ? p.string() : std::string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::vector<InjectionKind> parse_injection_list(const std::vector<std::string>& names) {
    std::vector<InjectionKind> out;
    for (const auto& n : names) {
        if (n == "all") {
            for (auto k : {InjectionKind::JerkyDirection, InjectionKind::ControllerDisconnect, InjectionKind::CounterintuitivePath,
                           InjectionKind::VaryingSpeed, InjectionKind::SensorSplash})
                out.push_back(k);
            continue;
        }
        out.push_back(injection_kind_from_string(n));
    }
    return out;
}

SystemConfig make_system_config(const RunOptions& opts) {
    if (opts.scenario_path.empty() || !fs::is_regular_file(opts.scenario_path))
        throw Error(ErrorCode::InvalidScenario, "scenario file not found: " + opts.scenario_path);
    SystemConfig cfg;
    cfg.scenario = load_scenario(opts.scenario_path);
    if (opts.seed) cfg.scenario.seed = *opts.seed;
    if (!opts.inject.empty()) {
        cfg.scenario.injections.clear();
        schedule_injections(cfg.scenario, parse_injection_list(opts.inject), cfg.scenario.seed);
    }
    cfg.pipeline = load_pipeline_config(beside(opts.scenario_path, opts.detectors_path, "detectors.yaml"),
                                        beside(opts.scenario_path, opts.envelope_path, "envelope.yaml"),
                                        beside(opts.scenario_path, opts.grouping_path, "grouping.yaml"));
    if (opts.validity_filter) cfg.pipeline.validity_filter = *opts.validity_filter;
    cfg.recovery.snapshot_dir = opts.snapshot_dir;
    return cfg;
}

RunSummary run_to_directory(const RunOptions& opts) {
    auto cfg = make_system_config(opts);
    fs::create_directories(opts.out_dir);
    {
        std::ofstream resolved((fs::path(opts.out_dir) / "scenario.yaml").string(), std::ios::binary);
        resolved << scenario_to_yaml(cfg.scenario);
    }
    const auto trace_path = (fs::path(opts.out_dir) / "trace.jsonl").string();
    RunSummary s;
    {
        auto sink = std::make_shared<JsonlFileSink>(trace_path);
        System sys(cfg, sink);
        std::unique_ptr<Gateway> gw;
        if (opts.serve_port >= 0) {
            gw = std::make_unique<Gateway>(sys, GatewayConfig{"127.0.0.1", opts.serve_port});
            gw->start();
        }
        sys.run_to_end();
        if (gw) gw->stop();
        sink->flush();
        s.report = sys.report();
        const auto alarms = sys.alarms();
        s.alarms = alarms.size();
        for (const auto& a : alarms) s.presented += was_presented(a) ? 1 : 0;
        s.duration_ms = cfg.scenario.duration_ms;
        write_labels((fs::path(opts.out_dir) / "labels.jsonl").string(), s.report.labels);
        sys.pipeline().desk().write_log((fs::path(opts.out_dir) / "alarms.jsonl").string());
    }
    s.trace_sha256 = sha256_hex(read_file(trace_path));
    return s;
}

EvalReport evaluate_directories(const std::vector<std::string>& dirs, const std::string& out_path, EvalConfig cfg) {
    std::vector<RunArtifacts> runs;
    for (const auto& d : dirs) runs.push_back(load_run(d));
    auto report = evaluate(runs, cfg);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw Error(ErrorCode::SinkUnwritable, out_path);
        out << to_json(report).dump(2) << '\n';
    }
    return report;
}

}  // namespace roboguard
