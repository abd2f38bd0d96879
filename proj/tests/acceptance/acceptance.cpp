// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 on any
// failure. Tolerances are pinned here, next to the checks that use them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "roboguard/alarmdesk.hpp"
#include "roboguard/capture.hpp"
#include "roboguard/detectors.hpp"
#include "roboguard/envelope.hpp"
#include "roboguard/error.hpp"
#include "roboguard/eval.hpp"
#include "roboguard/hierarchy.hpp"
#include "roboguard/placement.hpp"
#include "roboguard/recovery.hpp"
#include "roboguard/run.hpp"
#include "roboguard/system.hpp"
#include "roboguard/trace.hpp"
#include "support/random_trace.hpp"
#include "support/system_fixture.hpp"

using namespace roboguard;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Benchmark targets.
constexpr double kMinRecall = 0.70;
constexpr double kMaxFalseAlarmsPerMin = 0.5;
constexpr double kMaxSuiteWallS = 120.0;
// Capture: 1 kHz for 10 s into a sink that takes 10 ms per record.
constexpr int kCaptureMessages = 10000;
constexpr auto kSinkDelay = std::chrono::milliseconds(10);
constexpr double kPublishP999Ms = 1.0;
constexpr double kPublishMaxMs = 10.0;  // below one sink write
// Merge equivalence.
constexpr double kRateTolerance = 1e-9;
// Score agreement for oracle comparisons.
constexpr double kScoreTolerance = 1e-9;

const std::vector<std::string> kBenchScenarios = {"square", "figure8", "zigzag", "triangle", "corridor"};

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects the first few failure notes of a criterion.
struct Verdict {
    bool pass = true;
    std::vector<std::string> notes;
    std::ostringstream info;

    void require(bool ok, const std::string& note) {
        if (ok) return;
        pass = false;
        if (notes.size() < 4) notes.push_back(note);
    }
    Outcome done() {
        std::string d = info.str();
        for (const auto& n : notes) d += (d.empty() ? "" : "; ") + n;
        return {pass, d};
    }
};

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("roboguard_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool is_anomaly(const Alarm& a) { return a.signature.kind == "extreme" || a.signature.kind == "isolated" || a.signature.kind == "abnormal"; }

// ---------------------------------------------------------------- benchmark

Outcome benchmark() {
    Verdict v;
    const auto root = scratch("bench");
    const auto t0 = Clock::now();
    std::vector<std::string> dirs;
    for (const auto& name : kBenchScenarios) {
        RunOptions opts;
        opts.scenario_path = (fs::path(ROBOGUARD_BENCH_DIR) / (name + ".yaml")).string();
        opts.out_dir = (root / name).string();
        run_to_directory(opts);
        dirs.push_back(opts.out_dir);
    }
    const auto r = evaluate_directories(dirs, (root / "eval.json").string());
    const double wall = std::chrono::duration<double>(Clock::now() - t0).count();
    v.info << "recall=" << (r.recall ? format_double(*r.recall) : "null") << " far=" << format_double(std::round(r.false_alarm_rate * 1000) / 1000)
           << "/min injections=" << r.injections << " wall=" << format_double(std::round(wall * 100) / 100) << "s";
    v.require(r.injections == 20, "expected 20 detectable injections");
    v.require(r.recall && *r.recall >= kMinRecall, "recall below target");
    v.require(r.false_alarm_rate <= kMaxFalseAlarmsPerMin, "false-alarm rate above target");
    v.require(wall < kMaxSuiteWallS, "suite too slow");
    return v.done();
}

// ---------------------------------------------------------------- capture

class SlowSink : public TraceSink {
public:
    void write(const TraceRecord& rec) override {
        std::this_thread::sleep_for(kSinkDelay);
        inner_.write(rec);
    }
    std::size_t size() const { return inner_.size(); }

private:
    MemorySink inner_;
};

Outcome capture_nonblocking() {
    Verdict v;
    Bus bus;
    auto sink = std::make_shared<SlowSink>();
    auto cap = start_capture(bus, sink, {256, "capture", true});
    auto h = bus.create_topic({"/fast", {{"v", FieldKind::Int, std::nullopt}}, 16});
    auto live = bus.subscribe("live", "/fast", {kCaptureMessages * 2, false});

    std::vector<double> latency_ms;
    latency_ms.reserve(kCaptureMessages);
    const auto start = Clock::now();
    for (int i = 0; i < kCaptureMessages; ++i) {
        std::this_thread::sleep_until(start + std::chrono::microseconds(1000LL * i));
        const auto a = Clock::now();
        bus.publish(h, {{"v", std::int64_t{i}}}, i);
        latency_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - a).count());
    }
    cap->stop();
    const auto st = cap->stats();
    std::sort(latency_ms.begin(), latency_ms.end());
    const double p999 = latency_ms[static_cast<std::size_t>(0.999 * (latency_ms.size() - 1))];
    const double worst = latency_ms.back();
    v.info << "p99.9=" << format_double(std::round(p999 * 1000) / 1000) << "ms max=" << format_double(std::round(worst * 1000) / 1000)
           << "ms live=" << live.pending() << " written=" << st.records_written << " drops=" << st.capture_drops;
    v.require(p999 <= kPublishP999Ms, "publish p99.9 latency too high");
    v.require(worst < kPublishMaxMs, "a publish waited on the sink");
    v.require(live.pending() == static_cast<std::size_t>(kCaptureMessages), "live subscriber missed messages");
    v.require(st.records_enqueued == static_cast<std::uint64_t>(kCaptureMessages), "enqueued count off");
    v.require(st.records_written + st.capture_drops == st.records_enqueued, "drops not exactly counted");
    v.require(sink->size() == st.records_written, "sink holds a different count than reported");
    return v.done();
}

// ---------------------------------------------------------------- dynamic topic

Outcome dynamic_topic() {
    Verdict v;
    System sys(test_support::system_config(5000));
    test_support::run_until(sys, 2000);
    auto h = sys.bus().create_topic({"/gripper", {{"force", FieldKind::Float, std::nullopt}}});
    sys.bus().advertise("base", "/gripper");
    sys.bus().publish(h, {{"force", 1.5}}, sys.now_ms());
    sys.run_to_end();
    const auto trace = sys.trace();
    auto it = std::find_if(trace.begin(), trace.end(), [](const TraceRecord& r) { return r.topic == "/gripper"; });
    v.require(it != trace.end(), "mid-run topic absent from the trace");
    if (it != trace.end()) {
        v.info << "first /gripper record seq=" << it->seq << " t_ms=" << it->t_ms;
        v.require(it->seq == 1, "first message is not seq 1");
    }
    return v.done();
}

// ---------------------------------------------------------------- export

Outcome export_round_trip() {
    Verdict v;
    std::mt19937_64 rng(101);
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto original = test_support::random_trace(rng, 40);
        const auto jsonl = encode_jsonl(original);
        const auto base = decode_jsonl(jsonl);
        v.require(encode_jsonl(decode_jsonl(encode_jsonl(decode_csv(encode_csv(base))))) == jsonl, "csv round trip differs, trace " + std::to_string(i));
        v.require(encode_jsonl(decode_yaml(encode_yaml(base))) == jsonl, "yaml round trip differs, trace " + std::to_string(i));
        ++checked;
    }
    v.info << checked << " traces via csv and yaml";
    return v.done();
}

// ---------------------------------------------------------------- merge

Message value_msg(const std::string& topic, std::int64_t t, double x) { return Message{topic, t, 0, {{"v", x}}, Validity::Ok}; }

PlacementPlan robot_plan(PlacementMode mode) {
    PlacementPlan p;
    p.mode = mode;
    p.sites.push_back({"hub", true, {"/battery"}, {}});
    p.sites.push_back({"drive", false, {"/cmd_vel", "/odom"}, {}});
    p.sites.push_back({"sense", false, {"/scan_summary", "/sys/cpu/*"}, {}});
    return p;
}

std::vector<DetectorConfig> placement_detectors() {
    DetectorConfig odom;
    odom.id = "odom_rate";
    odom.target = {"rate:/odom"};
    odom.t = 3.0;
    odom.min_std = 0.5;
    DetectorConfig speed;
    speed.id = "speed";
    speed.target = {"mean:/cmd_vel.linear"};
    speed.t = 2.0;
    speed.min_std = 0.01;
    DetectorConfig cross;
    cross.id = "cross";
    cross.target = {"cooc:/cmd_vel>/scan_summary"};
    cross.t = 3.0;
    cross.min_std = 0.05;
    return {odom, speed, cross};
}

Outcome merge_equivalence() {
    Verdict v;
    std::mt19937_64 rng(202);
    const std::vector<std::string> topics = {"/a", "/b", "/c", "/d", "/e"};
    std::size_t windows = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Message> records;
        std::int64_t t = 0;
        const int n = std::uniform_int_distribution<int>(1, 400)(rng);
        for (int i = 0; i < n; ++i) {
            t += std::uniform_int_distribution<std::int64_t>(0, 60)(rng);
            records.push_back(value_msg(topics[rng() % topics.size()], t, std::uniform_real_distribution<double>(-5, 5)(rng)));
        }
        PlacementPlan plan;
        plan.mode = PlacementMode::LocalReduction;
        const int sites = std::uniform_int_distribution<int>(1, 4)(rng);
        plan.sites.push_back({"hub", true, {}, {}});
        for (int s = 0; s < sites; ++s) plan.sites.push_back({"s" + std::to_string(s), false, {}, {}});
        for (const auto& tp : topics) plan.sites[1 + rng() % static_cast<std::size_t>(sites)].topics.push_back(tp);

        FeatureConfig cfg;
        cfg.lag_ms = std::uniform_int_distribution<std::int64_t>(0, 200)(rng);
        const auto single = extract_frames(records, cfg);
        PlacementRunner r(plan, cfg);
        for (const auto& m : records) r.ingest(m);
        r.finish(single.back().window.end_ms);
        const auto& merged = r.hub_frames();
        const std::string tag = "partition " + std::to_string(trial);
        v.require(merged.size() == single.size(), tag + ": window count differs");
        if (merged.size() != single.size()) continue;
        for (std::size_t i = 0; i < single.size(); ++i, ++windows) {
            const auto& a = merged[i].frame;
            const auto& b = single[i];
            v.require(a.window == b.window, tag + ": window bounds differ");
            v.require(a.per_topic_rate.size() == b.per_topic_rate.size() && a.co_occurrence.size() == b.co_occurrence.size() &&
                          a.fields.size() == b.fields.size(),
                      tag + ": key sets differ");
            for (const auto& [tp, rate] : b.per_topic_rate)
                v.require(a.per_topic_rate.count(tp) && std::abs(a.per_topic_rate.at(tp) - rate) <= kRateTolerance, tag + ": rate differs");
            for (const auto& [pair, x] : b.co_occurrence)
                v.require(a.co_occurrence.count(pair) && std::abs(a.co_occurrence.at(pair) - x) <= kRateTolerance, tag + ": co-occurrence differs");
            for (const auto& [k, f] : b.fields) v.require(a.fields.count(k) && a.fields.at(k).count == f.count, tag + ": field count differs");
        }
    }

    // Lossless links: both modes decide identically on a robot trace.
    const auto rec = test_support::record(test_support::square_scenario(60000, 7));
    const std::int64_t end = (rec.trace.back().t_ms / 1000 + 1) * 1000;
    auto run = [&](PlacementMode mode) {
        PlacementRunner r(robot_plan(mode), {}, placement_detectors());
        for (const auto& m : rec.trace) r.ingest(m);
        r.finish(end);
        return std::make_pair(r.hub_frames(), r.hub_events());
    };
    const auto [hs_frames, hs_events] = run(PlacementMode::HubSpoke);
    const auto [lr_frames, lr_events] = run(PlacementMode::LocalReduction);
    bool frames_equal = hs_frames.size() == lr_frames.size();
    for (std::size_t i = 0; frames_equal && i < hs_frames.size(); ++i) frames_equal = hs_frames[i].frame == lr_frames[i].frame;
    bool events_equal = hs_events.size() == lr_events.size();
    for (std::size_t i = 0; events_equal && i < hs_events.size(); ++i)
        events_equal = hs_events[i].t_ms == lr_events[i].t_ms && hs_events[i].detector_id == lr_events[i].detector_id &&
                       hs_events[i].score == lr_events[i].score;
    v.require(frames_equal, "hub_spoke and local_reduction frames differ");
    v.require(events_equal, "hub_spoke and local_reduction decisions differ");
    v.info << "200 partitions, " << windows << " windows; robot trace " << hs_frames.size() << " windows, " << hs_events.size()
           << " events in both modes";
    return v.done();
}

// ---------------------------------------------------------------- envelope

Envelope random_envelope(std::mt19937_64& rng, std::size_t dims) {
    std::uniform_real_distribution<double> step(0.01, 3.0);
    std::uniform_real_distribution<double> origin(-10, 10);
    Envelope env;
    for (std::size_t i = 0; i < dims; ++i) {
        EnvelopeDim d;
        d.name = "d" + std::to_string(i);
        d.oe_lo = origin(rng);
        d.fos_lo = d.oe_lo + step(rng);
        d.n_lo = d.fos_lo + step(rng);
        d.n_hi = d.n_lo + step(rng);
        d.fos_hi = d.n_hi + step(rng);
        d.oe_hi = d.fos_hi + step(rng);
        env.dims.push_back(d);
    }
    return env;
}

RiskModel random_model(std::mt19937_64& rng) {
    RiskModel m;
    m.combine = rng() % 2 ? Combine::Max : Combine::Sum;
    m.p = std::uniform_real_distribution<double>(1.0, 4.0)(rng);
    return m;
}

Outcome envelope_properties() {
    Verdict v;
    std::mt19937_64 rng(303);

    // zero inside FOS
    for (int i = 0; i < 10000; ++i) {
        auto env = random_envelope(rng, 1 + rng() % 5);
        const auto m = random_model(rng);
        std::vector<double> phi;
        for (const auto& d : env.dims) phi.push_back(std::uniform_real_distribution<double>(d.fos_lo, d.fos_hi)(rng));
        v.require(instantaneous_risk(phi, env, m) == 0.0, "nonzero risk inside FOS");
    }

    // monotone along rays leaving FOS through one coordinate
    for (int i = 0; i < 10000; ++i) {
        auto env = random_envelope(rng, 1 + rng() % 5);
        const auto m = random_model(rng);
        std::vector<double> phi;
        for (const auto& d : env.dims) phi.push_back(std::uniform_real_distribution<double>(d.fos_lo, d.fos_hi)(rng));
        const std::size_t k = rng() % env.dims.size();
        const double dir = rng() % 2 ? 1.0 : -1.0;
        const auto& d = env.dims[k];
        const double from = phi[k];
        const double to = dir > 0 ? d.oe_hi + (d.oe_hi - d.fos_hi) : d.oe_lo - (d.fos_lo - d.oe_lo);
        double prev = instantaneous_risk(phi, env, m);
        for (int s = 1; s <= 40; ++s) {
            phi[k] = from + (to - from) * s / 40.0;
            const double r = instantaneous_risk(phi, env, m);
            v.require(r >= prev, "risk decreased moving outward");
            prev = r;
        }
    }

    // lambda = 0: constant risk r fires at R*/r within one tick
    const std::int64_t tick = 10;
    Envelope one;
    one.dims.push_back({"x", "", "", 0, 1, 0, 2, 0, 3});
    int timed = 0;
    for (int i = 0; i < 200; ++i) {
        RiskModel m;
        m.lambda_per_s = 0.0;
        m.p = 1.0;
        m.combine = Combine::Max;
        m.count_m = 1000000;
        m.r_star = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
        const double r = std::uniform_real_distribution<double>(0.02, 1.0)(rng);
        AccumulatorState s;
        Exceedance e{{r}, false, false};
        const double expected_ms = m.r_star / r * 1000.0;
        std::int64_t fired = -1;
        for (std::int64_t t = tick; t < 1'000'000 && fired < 0; t += tick)
            if (accumulate(r, tick, t, e, one, m, s)) fired = t;
        v.require(fired > 0 && std::abs(static_cast<double>(fired) - expected_ms) <= static_cast<double>(tick),
                  "trigger time off R*/r by more than a tick");
        ++timed;
    }

    // every decision names exactly the dims with nonzero exceedance
    std::size_t decisions = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto env = random_envelope(rng, 1 + rng() % 4);
        auto m = random_model(rng);
        m.r_star = 0.5;
        m.lambda_per_s = 0.1;
        m.count_m = 3;
        EnvelopeMonitor mon(env, m);
        for (std::int64_t t = 10; t <= 20000; t += 10) {
            std::vector<double> phi;
            for (const auto& d : env.dims) {
                const double span = d.oe_hi - d.oe_lo;
                phi.push_back(std::uniform_real_distribution<double>(d.oe_lo - 0.1 * span, d.oe_hi + 0.1 * span)(rng));
            }
            auto dec = mon.update(phi, t);
            if (!dec) continue;
            ++decisions;
            const auto ex = exceedances(phi, env);
            for (std::size_t i = 0; i < env.dims.size(); ++i) {
                const bool listed = dec->contributing.count(env.dims[i].name) == 1;
                v.require(listed == (ex.per_dim[i] > 0.0), "contributing set differs from the nonzero exceedances");
                if (listed) v.require(dec->contributing.at(env.dims[i].name) > 0.0, "a contributing dim has zero exceedance");
            }
            mon.reset();
        }
    }
    v.require(decisions > 0, "no decisions to check");
    v.info << "10000 inside points, 10000 rays, " << timed << " trigger times, " << decisions << " decisions";
    return v.done();
}

// ---------------------------------------------------------------- validity

// Anomaly raises are attributed to the splash when they fall inside its
// label window widened by the evaluation slack. Raises outside it are the
// scenario's background and must not depend on the filter.
Outcome validity_separation() {
    Verdict v;
    const std::int64_t slack = EvalConfig{}.window_ms;
    std::size_t off_splash = 0, on_splash = 0, off_all = 0, on_all = 0;
    bool counted = true;
    for (const auto& name : kBenchScenarios) {
        std::map<bool, std::vector<std::int64_t>> background;
        for (bool filter : {false, true}) {
            RunOptions opts;
            opts.scenario_path = (fs::path(ROBOGUARD_BENCH_DIR) / (name + ".yaml")).string();
            opts.inject = {"sensor_splash"};
            opts.validity_filter = filter;
            System sys(make_system_config(opts));
            sys.run_to_end();
            const auto labels = sys.report().labels;
            std::size_t splash = 0, all = 0;
            // every anomaly raise counts, suppressed or not
            for (const auto& a : sys.alarms()) {
                if (!is_anomaly(a)) continue;
                ++all;
                const bool attributed = std::any_of(labels.begin(), labels.end(), [&](const GroundTruthLabel& l) {
                    return l.kind == InjectionKind::SensorSplash && alarm_overlaps(a, l.start_ms - slack, l.end_ms + slack);
                });
                if (attributed) ++splash;
                else background[filter].push_back(a.t_ms);
            }
            counted = counted && sys.pipeline().counters().invalid_messages > 0 && sys.bus().validity_events() > 0;
            (filter ? on_splash : off_splash) += splash;
            (filter ? on_all : off_all) += all;
            if (!filter) v.require(splash >= 1, name + ": no splash alarm with the filter off");
            else v.require(splash == 0, name + ": splash alarm with the filter on");
        }
        v.require(background[false] == background[true], name + ": background alarms depend on the filter");
    }
    v.require(counted, "a run counted no invalid messages");
    v.info << "splash alarms off=" << off_splash << " on=" << on_splash << " (all anomaly raises off=" << off_all << " on=" << on_all
           << ") across " << kBenchScenarios.size() << " scenarios";
    return v.done();
}

// ---------------------------------------------------------------- HITL

AnomalyEvent false_alarm(std::int64_t t) {
    AnomalyEvent e;
    e.t_ms = t;
    e.window_end_ms = t + 1000;
    e.detector_id = "scan_rate";
    e.target = "rate:/scan_summary";
    e.kind = DetectorKind::Extreme;
    e.score = 4.0;
    e.topics = {"/scan_summary"};
    return e;
}

EStopDecision estop_at(std::int64_t t) {
    EStopDecision d;
    d.t_ms = t;
    d.accumulated_risk = 1.2;
    d.contributing = {{"speed", 0.4}};
    return d;
}

Outcome hitl_suppression() {
    Verdict v;
    {
        AlarmDeskConfig cfg;
        cfg.q = 0.8;
        cfg.n_min = 4;
        AlarmDesk desk(cfg);
        std::vector<Alarm> open;
        std::int64_t t = 0;
        for (int i = 0; i < 5; ++i, t += 60000) open.push_back(desk.ingest(false_alarm(t)));
        for (const auto& a : open) v.require(a.state == AlarmState::Presented, "cold raise not presented");
        for (int i = 0; i < 4; ++i) desk.feedback(open[i].id, FeedbackAction::Dismiss, t);
        const auto held = desk.ingest(false_alarm(t += 60000));
        v.require(held.state == AlarmState::Suppressed && held.suppressed_reason == "learned_model", "raise after 4 dismissals not suppressed");
        // the fifth raise was presented before the model closed and is still open
        desk.feedback(open[4].id, FeedbackAction::Confirm, t + 10);
        v.require(!desk.suppressing(held.signature), "confirm left suppression active");
        v.require(desk.counts(held.signature).dismissed == 0, "confirm did not reset the dismissals");
        v.require(desk.ingest(false_alarm(t += 60000)).state == AlarmState::Presented, "raise after confirm not presented");
    }
    {
        // a repeated false alarm, dismissed whenever shown
        std::mt19937_64 rng(404);
        bool monotone = true;
        for (int trial = 0; trial < 50; ++trial) {
            AlarmDesk desk;
            const std::int64_t window = 60000;
            std::vector<int> per_window(40, 0);
            std::int64_t t = 0;
            std::uniform_int_distribution<std::int64_t> gap(11000, 40000);
            while (t < window * 40) {
                auto a = desk.ingest(false_alarm(t));
                if (a.state == AlarmState::Presented) {
                    per_window[static_cast<std::size_t>(t / window)] += 1;
                    desk.feedback(a.id, FeedbackAction::Dismiss, t + 50);
                }
                t += gap(rng);
            }
            for (std::size_t w = 1; w < per_window.size(); ++w) monotone = monotone && per_window[w] <= per_window[w - 1];
        }
        v.require(monotone, "presentations per window increased");
    }
    int critical_presented = 0;
    {
        std::mt19937_64 rng(405);
        for (int trial = 0; trial < 1000; ++trial) {
            AlarmDeskConfig cfg;
            cfg.h = std::uniform_int_distribution<int>(1, 10)(rng);
            cfg.dynamic = rng() % 2 == 0;
            cfg.n_min = std::uniform_int_distribution<std::uint64_t>(1, 6)(rng);
            cfg.q = std::uniform_real_distribution<double>(0.0, 0.99)(rng);
            AlarmDesk desk(cfg);
            std::int64_t t = 0;
            const int dismissals = std::uniform_int_distribution<int>(0, 12)(rng);
            for (int i = 0; i < dismissals; ++i) {
                auto a = desk.ingest(estop_at(t));
                if (a.state == AlarmState::Presented) desk.feedback(a.id, FeedbackAction::Dismiss, t);
                t += std::uniform_int_distribution<std::int64_t>(0, 5000)(rng);
            }
            const auto a = desk.ingest(estop_at(t));
            if (a.state == AlarmState::Presented && a.severity == Severity::Critical) ++critical_presented;
        }
        v.require(critical_presented == 1000, "a critical alarm was held back");
    }
    v.info << "critical presented " << critical_presented << "/1000";
    return v.done();
}

// ---------------------------------------------------------------- recovery

double linear_of(const Message& m) { return std::get<double>(m.payload.at("linear")); }

Outcome recovery() {
    Verdict v;
    {
        auto cfg = test_support::system_config(40000);
        cfg.snapshot_interval_ms = 0;
        System sys(cfg);
        test_support::run_until(sys, 25000);
        const auto det = sys.snapshot(std::string(kDetectorNode));
        const auto env = sys.snapshot(std::string(kEnvelopeNode));
        test_support::run_until(sys, 35000);
        v.require(sys.pipeline().save_detectors() != det.state, "detector state did not move");
        v.require(sys.pipeline().envelope()->save_state() != env.state, "envelope state did not move");
        sys.restore(std::string(kDetectorNode), {std::string(kDetectorNode), "probe", "extreme"});
        sys.restore(std::string(kEnvelopeNode), {std::string(kEnvelopeNode), "probe", "extreme"});
        v.require(sys.pipeline().save_detectors() == det.state, "detector state differs after restore");
        v.require(sys.pipeline().envelope()->save_state() == env.state, "envelope state differs after restore");
    }
    {
        auto cfg = test_support::system_config(100000);
        cfg.snapshot_interval_ms = 1000;
        cfg.auto_restore = {std::string(kControllerNode)};
        System sys(cfg);
        test_support::run_until(sys, 25000);
        sys.inject(InjectionKind::ControllerDisconnect, 1.0, 60000);
        sys.run_to_end();
        v.info << "persistent fault: restores=" << sys.restores() << " escalations=" << sys.escalations();
        v.require(sys.restores() >= 1 && sys.restores() <= 3, "restore count outside 1..3");
        v.require(sys.escalations() == 1, "escalation not exactly once");
        v.require(sys.alarms(AlarmState::Escalated).size() == 1, "escalation alarm missing or repeated");
    }
    {
        System sys(test_support::system_config(45000));
        test_support::run_until(sys, 25000);
        const auto report = sys.enter_safe_mode("operator");
        const auto entered = sys.now_ms();
        const auto written = sys.capture_stats().records_written;
        const auto risk_t = sys.risk_json().at("t_ms").get<std::int64_t>();
        const auto events = sys.pipeline().counters().events;
        sys.inject(InjectionKind::VaryingSpeed, 0.8, 5000);
        test_support::run_until(sys, 40000);
        v.require(sys.capture_stats().records_written > written, "safe mode stopped capture");
        v.require(sys.risk_json().at("t_ms").get<std::int64_t>() > risk_t, "safe mode froze the envelope");
        v.require(sys.pipeline().counters().events == events, "detection ran in safe mode");
        bool clamped = report.speed_clamp.has_value();
        std::size_t cmds = 0;
        for (const auto& m : sys.trace())
            if (m.topic == "/cmd_vel" && m.t_ms > entered) {
                ++cmds;
                clamped = clamped && linear_of(m) <= report.speed_clamp->hi && linear_of(m) >= report.speed_clamp->lo;
            }
        v.require(clamped && cmds > 0, "teleop not clamped in safe mode");
        v.info << "; safe mode: " << cmds << " clamped commands";
    }
    {
        DetectorConfig det;
        det.id = "a_rate";
        det.target = {"rate:/a"};
        det.t = 4.0;
        det.min_std = 0.5;
        det.baseline_window_count = 5;
        ShadowPair pair({"mon", 4}, {}, {det});
        const std::int64_t promote_at = 21500;
        std::int64_t full_rate_from = -1;
        std::set<std::int64_t> bad;
        for (std::int64_t t = 0; t < 40000; t += 50) {
            if (t == 20000) pair.serving().poison(true);
            if (t == promote_at) full_rate_from = pair.promote(t).full_rate_from_ms;
            for (const auto& o : pair.ingest(Message{"/a", t, 0, {{"v", 0.0}}, Validity::Ok}))
                if (o.frame.window.start_ms > promote_at - 1000 && (o.degraded || std::abs(o.frame.per_topic_rate.at("/a") - 20.0) > 1e-9))
                    bad.insert(o.frame.window.start_ms);
        }
        v.require(full_rate_from >= 0 && full_rate_from - promote_at <= 1000, "full rate resumed more than one window after promotion");
        v.require(bad.size() <= 1, "promotion cost more than one window");
        v.info << "; promotion gap " << bad.size() << " window(s)";
    }
    return v.done();
}

// ---------------------------------------------------------------- hierarchy

Outcome hierarchy() {
    Verdict v;
    std::mt19937_64 rng(505);
    const std::vector<std::string> vocab = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 200; ++trial) {
        SystemGraph g;
        const int nodes = std::uniform_int_distribution<int>(1, 20)(rng);
        for (int i = 0; i < nodes; ++i) {
            auto n = "n" + std::to_string(i);
            g.nodes.insert(n);
            for (const auto& t : vocab)
                if (rng() % 2) g.tags[n].insert(t);
        }
        std::vector<GroupRule> rules = {{"g1", TagPredicate("a & b")}, {"g2", TagPredicate("c | !d")}, {"g3", TagPredicate("a")}};
        const auto s = apply_grouping(g, rules);
        std::map<std::string, int> seen;
        for (const auto& grp : s.groups)
            for (const auto& m : grp.members) ++seen[m];
        for (const auto& m : s.ungrouped) ++seen[m];
        bool partition = seen.size() == g.nodes.size();
        for (const auto& [_, c] : seen) partition = partition && c == 1;
        v.require(partition, "grouping is not a partition");
    }

    // composite detection against detection on a stream summed beforehand
    auto cfg = parse_hierarchy_yaml(R"(
groups:
  - {name: compute, match: cpu}
composites:
  - {name: cpu_total, group: compute, attribute: "mean:/sys/cpu/{node}.load"}
)");
    std::size_t decisions = 0, fired = 0;
    for (int stream = 0; stream < 1000; ++stream) {
        const int k = std::uniform_int_distribution<int>(2, 6)(rng);
        BusDirectory dir;
        std::vector<std::string> members;
        for (int i = 0; i < k; ++i) {
            members.push_back("m" + std::to_string(i));
            dir.node_tags[members.back()] = {"cpu"};
        }
        dir.epoch = 1;
        Hierarchy h(cfg);
        h.refresh(dir);
        DetectorConfig c;
        c.id = "grp";
        c.t = std::uniform_real_distribution<double>(2.0, 4.0)(rng);
        c.baseline_window_count = 10;
        c.min_std = 1e-3;
        c.target = {"composite:cpu_total"};
        Detector composite(c);
        c.target = {"mean:/presum.load"};
        Detector presummed(c);

        std::vector<double> level(k);
        for (auto& x : level) x = std::uniform_real_distribution<double>(0.05, 0.5)(rng);
        for (int w = 0; w < 40; ++w) {
            FeatureFrame f;
            f.window = {w * 1000LL, w * 1000LL + 1000};
            double sum = 0.0;
            for (int i = 0; i < k; ++i) {
                double x = level[i] + std::normal_distribution<double>(0.0, 0.02)(rng);
                if (rng() % 25 == 0) x += std::uniform_real_distribution<double>(0.2, 1.0)(rng);
                f.fields["/sys/cpu/" + members[i] + ".load"] = {1, x, 0, x, x};
                sum += x;
            }
            h.annotate(f);
            FeatureFrame oracle = f;
            oracle.composites.clear();
            oracle.fields["/presum.load"] = {1, sum, 0, sum, sum};
            const auto a = composite.observe(f);
            const auto b = presummed.observe(oracle);
            ++decisions;
            fired += b ? 1 : 0;
            v.require(a.has_value() == b.has_value(), "composite decision differs from the pre-summed oracle");
            if (a && b) v.require(std::abs(a->score - b->score) <= kScoreTolerance * std::max(1.0, std::abs(b->score)), "scores differ");
        }
    }

    // a member that is a function of another is not additive
    std::vector<std::vector<double>> b;
    std::vector<double> total;
    std::uniform_real_distribution<double> u(0, 2);
    for (int i = 0; i < 100; ++i) {
        const double x = u(rng);
        b.push_back({x, x * x});
        total.push_back(x + x * x);
    }
    const auto verdict = decomposability_test(b, total, {1, 1});
    v.require(!verdict.linear, "nonlinear pair classified linear");
    v.info << "200 groupings; 1000 streams, " << decisions << " decisions (" << fired << " firing); nonlinear pair "
           << (verdict.linear ? "linear" : "nonlinear");
    return v.done();
}

// ---------------------------------------------------------------- isolated

Outcome isolated_oracle() {
    Verdict v;
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> u(-3, 3);
    std::size_t fired = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int dims = std::uniform_int_distribution<int>(1, 4)(rng);
        const int n = std::uniform_int_distribution<int>(0, 5)(rng);
        const auto size = static_cast<std::size_t>(std::uniform_int_distribution<int>(n + 1, 1000)(rng));
        std::vector<std::vector<double>> hist(size, std::vector<double>(dims));
        for (auto& p : hist)
            for (auto& x : p) x = u(rng);
        std::vector<double> p(dims);
        for (auto& x : p) x = u(rng) * 1.5;
        DetectorConfig c;
        c.id = "iso";
        c.kind = DetectorKind::Isolated;
        c.target = {"rate:/x"};
        c.t = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
        c.n = n;

        // all distances, sorted
        std::vector<double> d;
        for (const auto& h : hist) {
            double acc = 0;
            for (int i = 0; i < dims; ++i) acc += (h[i] - p[i]) * (h[i] - p[i]);
            d.push_back(std::sqrt(acc));
        }
        std::sort(d.begin(), d.end());
        const auto within = std::count_if(d.begin(), d.end(), [&](double x) { return x <= c.t; });
        const bool fires = within <= n;
        const auto e = score_isolated(p, hist, c);
        v.require(e.has_value() == fires, "decision differs, history " + std::to_string(trial));
        if (e && fires) v.require(std::abs(e->score - d[static_cast<std::size_t>(n)]) <= kScoreTolerance, "score differs");
        fired += fires ? 1 : 0;
    }
    v.info << "500 histories, " << fired << " isolated";
    return v.done();
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"benchmark", benchmark},
        {"capture_nonblocking", capture_nonblocking},
        {"dynamic_topic", dynamic_topic},
        {"export_round_trip", export_round_trip},
        {"merge_equivalence", merge_equivalence},
        {"envelope_properties", envelope_properties},
        {"validity_separation", validity_separation},
        {"hitl_suppression", hitl_suppression},
        {"recovery", recovery},
        {"hierarchy", hierarchy},
        {"isolated_oracle", isolated_oracle},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
