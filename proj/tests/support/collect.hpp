// Helpers for running the simulator against an in-memory recorder.
#pragma once

#include <memory>

#include "roboguard/capture.hpp"
#include "roboguard/simbot.hpp"

namespace test_support {

inline roboguard::Scenario square_scenario(std::int64_t duration_ms = 60000, std::uint64_t seed = 1) {
    roboguard::Scenario s;
    s.path = {{0, 0}, {4, 0}, {4, 3}, {0, 3}};
    s.nominal_speed = 0.5;
    s.duration_ms = duration_ms;
    s.tick_ms = 10;
    s.seed = seed;
    return s;
}

struct Recorded {
    roboguard::Trace trace;
    roboguard::ScenarioReport report;
};

inline Recorded record(const roboguard::Scenario& s) {
    roboguard::Bus bus;
    auto sink = std::make_shared<roboguard::MemorySink>();
    roboguard::Capture cap(bus, sink, {1 << 20, "capture", false});
    roboguard::Simulator sim(bus, s);
    while (sim.step()) cap.pump();
    cap.stop();
    return {sink->records(), sim.report()};
}

}  // namespace test_support
