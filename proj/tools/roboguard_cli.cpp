// Command-line front end: run scenarios, evaluate runs, convert and replay
// traces, and serve the live API.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "roboguard/error.hpp"
#include "roboguard/gateway.hpp"
#include "roboguard/run.hpp"

namespace fs = std::filesystem;
using namespace roboguard;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct ConfigFlags {
    std::string detectors, envelope, grouping;
    bool no_validity_filter = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--detectors", detectors, "detector suite YAML (default: beside the scenario)");
        cmd->add_option("--envelope", envelope, "envelope YAML (default: beside the scenario)");
        cmd->add_option("--grouping", grouping, "grouping YAML (default: beside the scenario)");
        cmd->add_flag("--no-validity-filter", no_validity_filter, "let flagged values into features and the envelope");
    }
    void apply(RunOptions& o) const {
        o.detectors_path = detectors;
        o.envelope_path = envelope;
        o.grouping_path = grouping;
        if (no_validity_filter) o.validity_filter = false;
    }
};

std::vector<std::string> split_csv(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) out.push_back(part);
    }
    return out;
}

int cmd_run(const RunOptions& opts) {
    const auto s = run_to_directory(opts);
    std::uint64_t total = 0;
    for (const auto& [_, n] : s.report.messages_published) total += n;
    std::cout << "run " << opts.out_dir << ": " << total << " messages, " << s.report.labels.size() << " labels, " << s.alarms
              << " alarms (" << s.presented << " presented)\n"
              << "trace sha256 " << s.trace_sha256 << "\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& dirs, std::string out, std::int64_t window_ms, bool as_json) {
    if (out.empty()) out = dirs.size() == 1 ? (fs::path(dirs[0]) / "eval.json").string() : std::string("eval.json");
    const auto report = evaluate_directories(dirs, out, {window_ms});
    if (as_json) std::cout << to_json(report).dump(2) << "\n";
    else std::cout << format_table(report);
    return 0;
}

int cmd_export(const std::string& in, const std::string& format, const std::string& out) {
    const auto trace = read_trace_file(in);
    const auto text = encode_trace(trace, trace_format_from_string(format));
    std::ofstream os(out, std::ios::binary);
    if (!os) throw Error(ErrorCode::SinkUnwritable, out);
    os << text;
    std::cout << "exported " << trace.size() << " records to " << out << "\n";
    return 0;
}

int cmd_replay(const std::string& trace_path, const std::string& out, const ConfigFlags& flags) {
    auto cfg = load_pipeline_config(flags.detectors, flags.envelope, flags.grouping);
    if (flags.no_validity_filter) cfg.validity_filter = false;
    const auto trace = read_trace_file(trace_path);

    Bus bus;
    auto feed = bus.subscribe("monitor", "*", {trace.size() + 1, false});
    replay_trace(bus, trace, simbot_schemas());
    DetectionPipeline pipeline(cfg);
    pipeline.refresh(bus.directory());
    fs::create_directories(out);
    std::ofstream frames((fs::path(out) / "frames.jsonl").string(), std::ios::binary);
    auto write = [&](const PipelineStep& s) {
        for (const auto& f : s.frames) frames << to_json(f).dump() << '\n';
    };
    std::int64_t last = 0;
    for (const auto& m : feed.drain()) {
        write(pipeline.process(m));
        last = m.t_ms;
    }
    write(pipeline.advance_to((last / cfg.features.window_ms + 1) * cfg.features.window_ms));
    pipeline.desk().write_log((fs::path(out) / "alarms.jsonl").string());
    std::cout << "replayed " << trace.size() << " records: " << pipeline.counters().frames << " frames, " << pipeline.desk().alarms().size()
              << " alarms\n";
    return 0;
}

int cmd_serve(const RunOptions& opts, const std::string& host, int port, double speed, bool paused) {
    auto cfg = make_system_config(opts);
    System sys(cfg);
    GatewayConfig gcfg;
    gcfg.host = host;
    gcfg.port = port;
    gcfg.scenario_speed = speed;
    Gateway gw(sys, gcfg);
    gw.start();
    std::cout << "serving on http://" << host << ":" << gw.port() << "/v1" << std::endl;
    if (!paused) sys.start(speed);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    sys.stop();
    gw.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"roboguard: anomaly detection for robot pub-sub telemetry"};
    app.require_subcommand(1);

    RunOptions run_opts;
    std::vector<std::string> inject;
    std::uint64_t seed = 0;
    ConfigFlags run_flags;
    int run_serve_port = -1;
    auto* run = app.add_subcommand("run", "run a scenario with the detection stack");
    run->add_option("--scenario", run_opts.scenario_path, "scenario YAML")->required();
    run->add_option("--inject", inject, "injection kinds to schedule, comma separated, or 'all'");
    auto* seed_opt = run->add_option("--seed", seed, "override the scenario seed");
    run->add_option("--out", run_opts.out_dir, "run directory")->required();
    run->add_option("--snapshot-dir", run_opts.snapshot_dir, "persist snapshots under this directory");
    run->add_option("--serve", run_serve_port, "also serve the API on this port while running");
    run_flags.attach(run);

    std::vector<std::string> eval_dirs;
    std::string eval_out;
    std::int64_t eval_window = 1000;
    bool eval_json = false;
    auto* ev = app.add_subcommand("eval", "score run directories against their labels");
    ev->add_option("runs", eval_dirs, "run directories")->required();
    ev->add_option("--out", eval_out, "eval.json path (default: inside a single run directory)");
    ev->add_option("--window-ms", eval_window, "matching slack, one feature window");
    ev->add_flag("--json", eval_json, "print the report as JSON");

    std::string ex_trace, ex_format = "jsonl", ex_out;
    auto* ex = app.add_subcommand("export", "convert a trace between jsonl, csv and yaml");
    ex->add_option("--trace", ex_trace, "input trace (format from extension)")->required();
    ex->add_option("--format", ex_format, "jsonl | csv | yaml");
    ex->add_option("--out", ex_out, "output file")->required();

    std::string rp_trace, rp_out;
    ConfigFlags rp_flags;
    auto* rp = app.add_subcommand("replay", "run the detection stack over a recorded trace");
    rp->add_option("--trace", rp_trace, "trace file")->required();
    rp->add_option("--out", rp_out, "output directory")->required();
    rp_flags.attach(rp);

    RunOptions sv_opts;
    std::vector<std::string> sv_inject;
    std::uint64_t sv_seed = 0;
    std::string sv_host = "127.0.0.1";
    int sv_port = 8080;
    double sv_speed = 1.0;
    bool sv_paused = false;
    ConfigFlags sv_flags;
    auto* sv = app.add_subcommand("serve", "run a scenario live behind the HTTP API");
    sv->add_option("--scenario", sv_opts.scenario_path, "scenario YAML")->required();
    sv->add_option("--inject", sv_inject, "injection kinds to schedule");
    auto* sv_seed_opt = sv->add_option("--seed", sv_seed, "override the scenario seed");
    sv->add_option("--host", sv_host, "bind address");
    sv->add_option("--port", sv_port, "port, 0 for any free port");
    sv->add_option("--speed", sv_speed, "simulated seconds per wall second, 0 for unpaced");
    sv->add_flag("--paused", sv_paused, "wait for POST /v1/scenario/start");
    sv->add_option("--snapshot-dir", sv_opts.snapshot_dir, "persist snapshots under this directory");
    sv_flags.attach(sv);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            run_opts.inject = split_csv(inject);
            if (*seed_opt) run_opts.seed = seed;
            run_flags.apply(run_opts);
            run_opts.serve_port = run_serve_port;
            return cmd_run(run_opts);
        }
        if (*ev) return cmd_eval(eval_dirs, eval_out, eval_window, eval_json);
        if (*ex) return cmd_export(ex_trace, ex_format, ex_out);
        if (*rp) return cmd_replay(rp_trace, rp_out, rp_flags);
        if (*sv) {
            sv_opts.inject = split_csv(sv_inject);
            if (*sv_seed_opt) sv_opts.seed = sv_seed;
            sv_flags.apply(sv_opts);
            return cmd_serve(sv_opts, sv_host, sv_port, sv_speed, sv_paused);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
