#include "roboguard/eval.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "roboguard/error.hpp"

namespace roboguard {

using nlohmann::json;

namespace {

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MalformedInput, "cannot read " + path);
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedInput, path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<GroundTruthLabel> read_labels(const std::string& path) {
    std::vector<GroundTruthLabel> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            out.push_back(label_from_json(j));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedInput, path + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorCode::MalformedInput, path + ": " + e.what());
        }
    }
    return out;
}

void write_labels(const std::string& path, const std::vector<GroundTruthLabel>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::SinkUnwritable, path);
    for (const auto& l : labels) out << to_json(l).dump() << '\n';
}

std::int64_t trace_duration_ms(const Trace& trace) {
    std::int64_t last = -1;
    for (const auto& r : trace) last = std::max(last, r.t_ms);
    return last + 1;
}

RunArtifacts load_run(const std::string& dir) {
    namespace fs = std::filesystem;
    RunArtifacts run;
    run.name = fs::path(dir).filename().string();
    if (run.name.empty()) run.name = fs::path(dir).parent_path().filename().string();
    const auto trace_path = (fs::path(dir) / "trace.jsonl").string();
    // only the time span is needed from the trace
    std::int64_t last = -1;
    for (const auto& j : read_jsonl(trace_path)) {
        if (!j.is_object() || !j.contains("t_ms") || !j["t_ms"].is_number_integer())
            throw Error(ErrorCode::MalformedInput, trace_path + ": record without integer t_ms");
        last = std::max(last, j["t_ms"].get<std::int64_t>());
    }
    run.duration_ms = last < 0 ? 0 : last + 1;
    run.labels = read_labels((fs::path(dir) / "labels.jsonl").string());
    run.alarms = read_alarm_log((fs::path(dir) / "alarms.jsonl").string());
    return run;
}

bool was_presented(const Alarm& a) {
    for (const auto& t : a.history)
        if (t.state == AlarmState::Presented) return true;
    return false;
}

bool alarm_overlaps(const Alarm& a, std::int64_t lo_ms, std::int64_t hi_ms) { return lo_ms <= a.t_ms && a.t_ms <= hi_ms; }

bool alarm_matches(const Alarm& a, const GroundTruthLabel& label, std::int64_t window_ms) {
    if (!alarm_overlaps(a, label.start_ms - window_ms, label.end_ms + window_ms)) return false;
    for (const auto& t : perturbed_topics(label.kind))
        if (a.topics.count(t)) return true;
    return false;
}

EvalReport evaluate(const std::vector<RunArtifacts>& runs, EvalConfig cfg) {
    if (cfg.window_ms <= 0) throw Error(ErrorCode::InvalidConfig, "window_ms must be positive");
    EvalReport r;
    double total_ms = 0.0;
    for (const auto& run : runs) {
        total_ms += static_cast<double>(run.duration_ms);
        std::vector<const Alarm*> presented;
        for (const auto& a : run.alarms)
            if (was_presented(a)) presented.push_back(&a);

        std::uint64_t run_inj = 0, run_det = 0, run_false = 0;
        for (const auto& label : run.labels) {
            auto& k = r.per_kind[std::string(to_string(label.kind))];
            bool hit = false;
            for (const auto* a : presented) hit = hit || alarm_matches(*a, label, cfg.window_ms);
            if (label.expected_detection) {
                ++k.injections;
                ++r.injections;
                ++run_inj;
                if (hit) {
                    ++k.detected;
                    ++r.detected;
                    ++run_det;
                }
            } else if (hit) {
                ++k.alarmed;
            }
        }
        for (const auto* a : presented) {
            bool explained = false;
            for (const auto& label : run.labels)
                if (label.expected_detection && alarm_matches(*a, label, cfg.window_ms)) explained = true;
            if (!explained) ++run_false;
        }
        r.presented += presented.size();
        r.false_alarms += run_false;
        const double minutes = static_cast<double>(run.duration_ms) / 60000.0;
        r.runs.push_back({{"name", run.name},
                          {"duration_ms", run.duration_ms},
                          {"injections", run_inj},
                          {"detected", run_det},
                          {"presented", presented.size()},
                          {"false_alarms", run_false},
                          {"false_alarm_rate", minutes > 0 ? static_cast<double>(run_false) / minutes : 0.0}});
    }
    r.minutes = total_ms / 60000.0;
    if (r.injections > 0) r.recall = static_cast<double>(r.detected) / static_cast<double>(r.injections);
    r.false_alarm_rate = r.minutes > 0 ? static_cast<double>(r.false_alarms) / r.minutes : 0.0;
    for (auto& [_, k] : r.per_kind)
        if (k.injections > 0) k.recall = static_cast<double>(k.detected) / static_cast<double>(k.injections);
    return r;
}

json to_json(const EvalReport& r) {
    json kinds = json::object();
    for (const auto& [name, k] : r.per_kind)
        kinds[name] = {{"injections", k.injections}, {"detected", k.detected}, {"alarmed", k.alarmed}, {"recall", optional_number(k.recall)}};
    return {{"recall", optional_number(r.recall)},
            {"false_alarm_rate", r.false_alarm_rate},
            {"injections", r.injections},
            {"detected", r.detected},
            {"presented", r.presented},
            {"false_alarms", r.false_alarms},
            {"minutes", r.minutes},
            {"per_kind", kinds},
            {"runs", r.runs}};
}

std::string format_table(const EvalReport& r) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %10s %9s %8s %8s\n", "kind", "injections", "detected", "alarmed", "recall");
    os << buf;
    for (const auto& [name, k] : r.per_kind) {
        const std::string rec = k.recall ? std::to_string(*k.recall).substr(0, 5) : "-";
        std::snprintf(buf, sizeof buf, "%-24s %10llu %9llu %8llu %8s\n", name.c_str(), static_cast<unsigned long long>(k.injections),
                      static_cast<unsigned long long>(k.detected), static_cast<unsigned long long>(k.alarmed), rec.c_str());
        os << buf;
    }
    const std::string rec = r.recall ? std::to_string(*r.recall).substr(0, 5) : "null";
    std::snprintf(buf, sizeof buf, "recall %s  false_alarm_rate %.3f/min  (%llu false of %llu presented over %.2f min)\n", rec.c_str(),
                  r.false_alarm_rate, static_cast<unsigned long long>(r.false_alarms), static_cast<unsigned long long>(r.presented),
                  r.minutes);
    os << buf;
    return os.str();
}

}  // namespace roboguard
