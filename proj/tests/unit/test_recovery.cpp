#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "roboguard/bus.hpp"
#include "roboguard/error.hpp"
#include "roboguard/recovery.hpp"

using namespace roboguard;

namespace {

Message msg(const std::string& topic, std::int64_t t, double v = 0.0) {
    return Message{topic, t, 0, {{"v", v}}, Validity::Ok};
}

DetectorConfig rate_detector() {
    DetectorConfig c;
    c.id = "a_rate";
    c.kind = DetectorKind::Extreme;
    c.target = {"rate:/a"};
    c.t = 4.0;
    c.min_std = 0.5;
    c.baseline_window_count = 5;
    return c;
}

// 20 Hz on /a with a slow value drift
std::vector<Message> stream(std::int64_t until_ms) {
    std::vector<Message> out;
    for (std::int64_t t = 0; t < until_ms; t += 50) out.push_back(msg("/a", t, 0.001 * static_cast<double>(t)));
    return out;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidConfig;
}

NodeHooks hooks_for(MonitorNode& n) {
    return {[&n] { return n.save_state(); }, [&n](const nlohmann::json& j) { n.load_state(j); }};
}

}  // namespace

TEST_CASE("restore reproduces the snapshotted state exactly") {
    MonitorNode node("mon", {}, {rate_detector()});
    for (const auto& m : stream(12000)) node.ingest(m);
    RecoveryManager rm;
    rm.register_node("mon", hooks_for(node));
    const auto snap = rm.take_snapshot("mon", 12000);
    CHECK(snap.health_ms == 12000);
    const auto before = node.save_state();
    CHECK(before.at("detectors")[0].at("scalar").size() == 5);

    for (const auto& m : stream(20000)) if (m.t_ms >= 12000) node.ingest(m);
    CHECK(node.save_state() != before);
    const auto r = rm.restore("mon", {"mon", "a_rate", "extreme"}, 20000);
    CHECK(r.restored);
    CHECK(r.snapshot_t_ms == 12000);
    CHECK(node.save_state() == before);
}

TEST_CASE("snapshots are refused inside the health window") {
    MonitorNode node("mon", {}, {rate_detector()});
    RecoveryManager rm;
    rm.register_node("mon", hooks_for(node));
    rm.note_anomaly("mon", 8000);
    CHECK_FALSE(rm.healthy("mon", 10000));
    CHECK(code_of([&] { rm.take_snapshot("mon", 10000); }) == ErrorCode::NodeUnhealthy);
    CHECK(rm.take_snapshot("mon", 13000).health_ms == 5000);
    CHECK(code_of([&] { rm.take_snapshot("nav", 13000); }) == ErrorCode::UnknownNode);
}

TEST_CASE("restore without a snapshot") {
    MonitorNode node("mon", {}, {rate_detector()});
    RecoveryManager rm;
    rm.register_node("mon", hooks_for(node));
    CHECK(code_of([&] { rm.restore("mon", {"mon", "a_rate", "extreme"}, 0); }) == ErrorCode::NoSnapshot);
}

TEST_CASE("a one-shot fault is cleared by a single restore") {
    int counter = 0;
    RecoveryManager rm;
    rm.register_node("ctl", {[&] { return nlohmann::json(counter); }, [&](const nlohmann::json& j) { counter = j.get<int>(); }});
    rm.take_snapshot("ctl", 0);
    counter = 999;  // corrupted once
    const FaultSignature sig{"ctl", "d", "extreme"};
    auto r = rm.restore("ctl", sig, 1000);
    CHECK(r.restored);
    CHECK(counter == 0);
    CHECK(rm.guard().restores_in_window(sig, 1000) == 1);
    CHECK_FALSE(rm.guard().disabled(sig));
}

TEST_CASE("a persistent fault trips the cycle guard exactly once") {
    int counter = 0;
    RecoveryManager rm;
    rm.register_node("ctl", {[&] { return nlohmann::json(counter); }, [&](const nlohmann::json& j) { counter = j.get<int>(); }});
    rm.take_snapshot("ctl", 0);
    std::vector<std::int64_t> escalations;
    rm.on_escalation([&](const FaultSignature&, int restores, std::int64_t t) {
        CHECK(restores == 3);
        escalations.push_back(t);
    });
    const FaultSignature sig{"ctl", "d", "extreme"};
    std::vector<std::int64_t> restored_at;
    for (std::int64_t t = 1000; t <= 180000; t += 1000) {
        counter = 999;  // the fault comes back every tick
        if (rm.guard().disabled(sig)) {
            CHECK(code_of([&] { rm.restore("ctl", sig, t); }) == ErrorCode::CycleGuardTripped);
            continue;
        }
        auto r = rm.restore("ctl", sig, t);
        if (r.restored) restored_at.push_back(t);
        CHECK(r.escalated != r.restored);
    }
    CHECK(escalations.size() == 1);
    CHECK(restored_at.size() == 3);
    for (std::size_t i = 0; i < restored_at.size(); ++i) {
        const auto in_window = std::count_if(restored_at.begin(), restored_at.end(),
                                             [&](auto t) { return t >= restored_at[i] && t < restored_at[i] + 60000; });
        CHECK(in_window <= 3);
    }
    // a different signature on the same node is unaffected
    CHECK(rm.restore("ctl", {"ctl", "d", "isolated"}, 200000).restored);
    rm.guard().reset(sig);
    CHECK(rm.restore("ctl", sig, 200000).restored);
}

TEST_CASE("restores spread beyond the cycle window stay allowed") {
    CycleGuard g(3, 60000);
    const FaultSignature sig{"n", "d", "extreme"};
    for (std::int64_t t = 0; t < 600000; t += 25000) CHECK(g.attempt(sig, t) == CycleGuard::Verdict::Allowed);
}

TEST_CASE("shadow decimation keeps every d-th message") {
    ShadowPair pair({"mon", 2}, {}, {rate_detector()});
    for (int i = 1; i <= 10; ++i) pair.ingest(msg("/a", i * 10));
    CHECK(pair.shadow_inputs() == std::vector<std::uint64_t>{2, 4, 6, 8, 10});
    CHECK(pair.shadow().processed() == 5);
    CHECK(pair.serving().processed() == 10);
    for (int d = 2; d <= 7; ++d)
        for (std::uint64_t i = 1; i <= 50; ++i) CHECK(shadow_receives(i, d) == (i % static_cast<std::uint64_t>(d) == 0));
}

TEST_CASE("promoting a cold shadow fails") {
    ShadowPair pair({"mon", 4}, {}, {rate_detector()});
    for (int i = 0; i < 10; ++i) pair.ingest(msg("/a", i * 50));
    CHECK_FALSE(pair.shadow_warm());
    CHECK(code_of([&] { pair.promote(500); }) == ErrorCode::ShadowCold);
    CHECK_THROWS_AS(ShadowPair({"mon", 1}, {}, {}), Error);
}

TEST_CASE("promotion after poisoning costs at most one window") {
    const int d = 4;
    ShadowPair pair({"mon", d}, {}, {rate_detector()});
    std::vector<MonitorNode::Output> served;
    bool promoted = false;
    for (const auto& m : stream(40000)) {
        if (m.t_ms == 20000) pair.serving().poison(true);
        if (!promoted && m.t_ms == 21500) {
            auto r = pair.promote(m.t_ms);
            CHECK(r.promoted == "mon.shadow");
            CHECK(r.demoted == "mon");
            CHECK(r.full_rate_from_ms == 22000);
            promoted = true;
        }
        for (auto& o : pair.ingest(m)) served.push_back(std::move(o));
    }
    REQUIRE(served.size() == 39);
    int degraded = 0;
    for (const auto& o : served) {
        const auto start = o.frame.window.start_ms;
        if (start < 20000) {
            CHECK(o.producer == "mon");
            CHECK(o.frame.per_topic_rate.at("/a") == doctest::Approx(20.0));
        } else if (start == 20000) {
            CHECK(o.producer == "mon");  // poisoned output
            CHECK(o.frame.per_topic_rate.at("/a") == doctest::Approx(0.0));
        } else {
            CHECK(o.producer == "mon.shadow");
            if (o.degraded) ++degraded;
            if (start >= 22000) {
                CHECK_FALSE(o.degraded);
                CHECK(o.frame.per_topic_rate.at("/a") == doctest::Approx(20.0));
                CHECK(o.events.empty());
            }
        }
    }
    CHECK(degraded <= 1);
    // the demoted node restarted as the decimated shadow
    CHECK(pair.shadow().name() == "mon");
    CHECK(pair.shadow().rate_scale() == d);
}

TEST_CASE("shadow cost is exactly the primary cost over d") {
    for (int d : {2, 3, 5, 8}) {
        ShadowPair pair({"mon", d}, {}, {rate_detector()});
        const auto ms = stream(10000);
        for (const auto& m : ms) pair.ingest(m);
        CHECK(pair.serving().processed() == ms.size());
        CHECK(pair.shadow().processed() == ms.size() / static_cast<std::size_t>(d));
    }
}

TEST_CASE("snapshots during 1 kHz ingestion drop nothing") {
    Bus bus;
    TopicSchema schema{"/fast", {{"v", FieldKind::Float, std::nullopt}}, 4096, RangePolicy::Reject};
    auto topic = bus.create_topic(schema);
    auto sub = bus.subscribe("mon", "/fast");
    MonitorNode node("mon", {}, {rate_detector()});
    std::mutex node_mu;
    RecoveryManager rm;
    rm.register_node("mon", {[&] {
                                 std::lock_guard lock(node_mu);
                                 return node.save_state();
                             },
                             [&](const nlohmann::json& j) {
                                 std::lock_guard lock(node_mu);
                                 node.load_state(j);
                             }});

    constexpr int kMessages = 2000;
    std::atomic<bool> done{false};
    std::atomic<std::uint64_t> consumed{0};
    std::thread consumer([&] {
        while (!done || sub.pending() > 0) {
            if (auto m = sub.wait(std::chrono::milliseconds(5))) {
                std::lock_guard lock(node_mu);
                node.ingest(*m);
                ++consumed;
            }
        }
    });
    std::atomic<int> snapshots{0};
    std::thread snapper([&] {
        while (!done) {
            rm.take_snapshot("mon", 0);
            ++snapshots;
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    });
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < kMessages; ++i) {
        bus.publish(topic, {{"v", 1.0}}, i);
        std::this_thread::sleep_until(start + std::chrono::microseconds(1000 * (i + 1)));
    }
    done = true;
    consumer.join();
    snapper.join();
    CHECK(snapshots > 10);
    CHECK(consumed == kMessages);
    CHECK(sub.drops() == 0);
    std::lock_guard lock(node_mu);
    CHECK(node.processed() == kMessages);
}

TEST_CASE("snapshots persist as versioned files") {
    const auto dir = std::filesystem::temp_directory_path() / "roboguard_snap_test";
    std::filesystem::remove_all(dir);
    int value = 7;
    RecoveryConfig cfg;
    cfg.snapshot_dir = dir.string();
    {
        RecoveryManager rm(cfg);
        rm.register_node("ctl", {[&] { return nlohmann::json(value); }, [&](const nlohmann::json& j) { value = j.get<int>(); }});
        rm.take_snapshot("ctl", 1000);
        value = 8;
        rm.take_snapshot("ctl", 2000);
    }
    CHECK(std::filesystem::exists(dir / "ctl" / "1000.json"));
    CHECK(std::filesystem::exists(dir / "ctl" / "2000.json"));
    value = 0;
    RecoveryManager fresh(cfg);
    fresh.register_node("ctl", {[&] { return nlohmann::json(value); }, [&](const nlohmann::json& j) { value = j.get<int>(); }});
    CHECK(fresh.load_persisted() == 1);
    CHECK(fresh.latest("ctl")->t_ms == 2000);
    fresh.restore("ctl", {"ctl", "x", "extreme"}, 3000);
    CHECK(value == 8);
    std::filesystem::remove_all(dir);
}
