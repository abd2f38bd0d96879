#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "roboguard/error.hpp"
#include "roboguard/eval.hpp"
#include "roboguard/system.hpp"
#include "support/system_fixture.hpp"

using namespace roboguard;
namespace fs = std::filesystem;

namespace {

Alarm presented(std::uint64_t id, std::int64_t t, std::set<std::string> topics, std::string detector = "d") {
    Alarm a;
    a.id = id;
    a.t_ms = t;
    a.last_raise_ms = t;
    a.signature = {detector, "extreme", "x"};
    a.state = AlarmState::Presented;
    a.topics = std::move(topics);
    a.history = {{t, AlarmState::Raised, ""}, {t, AlarmState::Presented, ""}};
    return a;
}

Alarm suppressed(std::uint64_t id, std::int64_t t, std::set<std::string> topics) {
    Alarm a = presented(id, t, std::move(topics));
    a.state = AlarmState::Suppressed;
    a.suppressed_reason = "rate_threshold";
    a.history = {{t, AlarmState::Raised, ""}, {t, AlarmState::Suppressed, "rate_threshold"}};
    return a;
}

GroundTruthLabel label(InjectionKind k, std::int64_t start, std::int64_t end, bool expected = true) { return {start, end, k, expected}; }

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("roboguard_eval_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("recall is matched injections over injections") {
    RunArtifacts run;
    run.name = "r";
    run.duration_ms = 600000;
    std::uint64_t id = 1;
    for (int i = 0; i < 10; ++i) {
        const std::int64_t start = 20000 + i * 50000;
        run.labels.push_back(label(InjectionKind::JerkyDirection, start, start + 5000));
        if (i < 7) run.alarms.push_back(presented(id++, start + 2000, {"/cmd_vel"}));
    }
    const auto r = evaluate({run});
    REQUIRE(r.recall);
    CHECK(*r.recall == doctest::Approx(0.7));
    CHECK(r.detected == 7);
    CHECK(r.false_alarms == 0);
    CHECK(r.false_alarm_rate == 0.0);
    CHECK(r.per_kind.at("jerky_direction").injections == 10);
}

TEST_CASE("no injections and no alarms: recall is null, no false alarms") {
    RunArtifacts run;
    run.duration_ms = 60000;
    const auto r = evaluate({run});
    CHECK_FALSE(r.recall);
    CHECK(r.false_alarm_rate == 0.0);
    CHECK(to_json(r).at("recall").is_null());
    CHECK(evaluate({}).false_alarm_rate == 0.0);
}

TEST_CASE("matching needs the slack window and a perturbed topic") {
    const auto l = label(InjectionKind::ControllerDisconnect, 10000, 15000);
    CHECK(alarm_matches(presented(1, 9000, {"/cmd_vel"}), l, 1000));
    CHECK(alarm_matches(presented(1, 16000, {"/cmd_vel"}), l, 1000));
    CHECK_FALSE(alarm_matches(presented(1, 16001, {"/cmd_vel"}), l, 1000));
    CHECK_FALSE(alarm_matches(presented(1, 8999, {"/cmd_vel"}), l, 1000));
    // a disconnect leaves /odom alone
    CHECK_FALSE(alarm_matches(presented(1, 12000, {"/odom"}), l, 1000));
    CHECK(alarm_matches(presented(1, 12000, {"/odom"}), label(InjectionKind::VaryingSpeed, 10000, 15000), 1000));
}

TEST_CASE("a long episode speaks only for its presentation") {
    RunArtifacts run;
    run.duration_ms = 120000;
    run.labels = {label(InjectionKind::JerkyDirection, 60000, 65000)};
    auto a = presented(1, 20000, {"/cmd_vel"});
    a.last_raise_ms = 100000;
    a.raise_count = 80;
    run.alarms = {a};
    const auto r = evaluate({run});
    CHECK(*r.recall == 0.0);
    CHECK(r.false_alarms == 1);
    CHECK(r.false_alarm_rate == doctest::Approx(0.5));
}

TEST_CASE("false alarms count presented alarms only") {
    RunArtifacts run;
    run.duration_ms = 120000;
    run.labels = {label(InjectionKind::JerkyDirection, 30000, 35000), label(InjectionKind::SensorSplash, 60000, 65000, false)};
    run.alarms = {presented(1, 31000, {"/cmd_vel"}), presented(2, 61000, {"/scan_summary"}), presented(3, 90000, {"/odom"}),
                  suppressed(4, 100000, {"/odom"})};
    const auto r = evaluate({run});
    CHECK(*r.recall == 1.0);
    CHECK(r.presented == 3);
    CHECK(r.false_alarms == 2);
    CHECK(r.false_alarm_rate == doctest::Approx(1.0));
    CHECK(r.per_kind.at("sensor_splash").alarmed == 1);
    CHECK(r.per_kind.at("sensor_splash").injections == 0);
    CHECK_FALSE(r.per_kind.at("sensor_splash").recall);
}

TEST_CASE("evaluation is pure") {
    RunArtifacts run;
    run.duration_ms = 60000;
    run.labels = {label(InjectionKind::VaryingSpeed, 20000, 25000)};
    run.alarms = {presented(1, 21000, {"/cmd_vel"}), presented(2, 40000, {"/odom"})};
    const auto before = to_json(run.alarms.front());
    const auto a = to_json(evaluate({run}));
    const auto b = to_json(evaluate({run}));
    CHECK(a == b);
    CHECK(to_json(run.alarms.front()) == before);
    CHECK_FALSE(format_table(evaluate({run})).empty());
}

TEST_CASE("run directories load and malformed input is rejected") {
    const auto dir = scratch("load");
    {
        std::ofstream t(dir / "trace.jsonl");
        t << R"({"t_ms":0,"topic":"/a","seq":0,"payload":{},"validity":"ok"})" << "\n"
          << R"({"t_ms":59999,"topic":"/a","seq":1,"payload":{},"validity":"ok"})" << "\n";
    }
    write_labels((dir / "labels.jsonl").string(), {label(InjectionKind::JerkyDirection, 1000, 2000)});
    AlarmDesk desk;
    desk.ingest(AnomalyEvent{1500, 2500, "d", "std:/cmd_vel.angular", DetectorKind::Extreme, 9.0, {}, {"/cmd_vel"}});
    desk.write_log((dir / "alarms.jsonl").string());

    const auto run = load_run(dir.string());
    CHECK(run.duration_ms == 60000);
    CHECK(run.labels.size() == 1);
    CHECK(run.alarms.size() == 1);
    CHECK(*evaluate({run}).recall == 1.0);

    {
        std::ofstream bad(dir / "labels.jsonl");
        bad << "{\"start_ms\": 1\n";
    }
    try {
        load_run(dir.string());
        FAIL("expected MalformedInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MalformedInput);
    }
    {
        std::ofstream bad(dir / "labels.jsonl");
        bad << R"({"start_ms":1,"end_ms":2,"kind":"teleport","expected_detection":true})" << "\n";
    }
    CHECK_THROWS_AS(load_run(dir.string()), Error);
    CHECK_THROWS_AS(load_run((dir / "missing").string()), Error);
    CHECK_THROWS_AS(evaluate({}, {0}), Error);
}

TEST_CASE("the validity filter lowers the false-alarm rate on a splash") {
    auto run = [](bool filter) {
        auto cfg = test_support::system_config(90000);
        cfg.pipeline.validity_filter = filter;
        cfg.scenario.injections = {{InjectionKind::JerkyDirection, 30000, 35000, 2.5}, {InjectionKind::SensorSplash, 60000, 65000, 1.2}};
        System sys(cfg);
        sys.run_to_end();
        return RunArtifacts{filter ? "on" : "off", trace_duration_ms(sys.trace()), sys.report().labels, sys.alarms()};
    };
    const auto on = evaluate({run(true)});
    const auto off = evaluate({run(false)});
    CHECK(*on.recall == 1.0);
    CHECK(*off.recall == 1.0);
    CHECK(off.per_kind.at("sensor_splash").alarmed == 1);
    CHECK(on.per_kind.at("sensor_splash").alarmed == 0);
    CHECK(off.false_alarm_rate > on.false_alarm_rate);
}
