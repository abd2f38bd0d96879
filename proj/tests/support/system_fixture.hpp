// Small full-stack configurations for system, gateway and acceptance tests.
#pragma once

#include <string>

#include "roboguard/system.hpp"
#include "support/collect.hpp"

namespace test_support {

// Benchmark-style detectors on /cmd_vel and the scan range; baselines fit
// inside a 20 s warm-up.
inline constexpr const char* kDetectors = R"(
detectors:
  - {id: cmd_rate, kind: extreme, target: "rate:/cmd_vel", t: 4, min_std: 1.0, baseline_window_count: 10}
  - {id: cmd_turn_spread, kind: extreme, target: "std:/cmd_vel.angular", t: 6, min_std: 0.1, baseline_window_count: 20}
  - {id: cmd_speed_peak, kind: extreme, target: "max:/cmd_vel.linear", t: 5, min_std: 0.03, baseline_window_count: 20}
  - {id: scan_range, kind: extreme, target: "mean:/scan_summary.range", t: 6, min_std: 0.1, baseline_window_count: 20}
assumptions:
  - {name: teleop-active, expr: "rate(/cmd_vel) > 0"}
)";

// Loose envelope: nominal driving never leaves FOS.
inline constexpr const char* kCalmEnvelope = R"(
dims:
  - {name: speed, source: /cmd_vel.linear, n: [0.0, 0.75], fos: [-0.2, 1.2], oe: [-3.0, 3.0]}
  - {name: turn_rate, source: /odom.angular, n: [-1.25, 1.25], fos: [-2.0, 2.0], oe: [-3.2, 3.2]}
risk: {combine: max, p: 2, lambda: 0.1, r_star: 1.0, count_m: 5, count_window_ms: 10000}
)";

// Tight speed envelope: any speed gain beyond 0.7 m/s accrues risk fast.
inline constexpr const char* kTightEnvelope = R"(
dims:
  - {name: speed, source: /cmd_vel.linear, n: [0.0, 0.6], fos: [-0.1, 0.7], oe: [-2.0, 2.0]}
  - {name: turn_rate, source: /odom.angular, n: [-1.25, 1.25], fos: [-2.0, 2.0], oe: [-3.2, 3.2]}
risk: {combine: max, p: 1, lambda: 0.0, r_star: 0.05, count_m: 1000, count_window_ms: 10000}
)";

inline roboguard::SystemConfig system_config(std::int64_t duration_ms = 60000, const char* envelope = kCalmEnvelope,
                                             std::uint64_t seed = 1) {
    roboguard::SystemConfig cfg;
    cfg.scenario = square_scenario(duration_ms, seed);
    cfg.pipeline.detectors = roboguard::parse_detector_yaml(kDetectors);
    if (envelope) cfg.pipeline.envelope = roboguard::parse_envelope_yaml(envelope);
    return cfg;
}

inline void run_until(roboguard::System& sys, std::int64_t t_ms) {
    while (sys.now_ms() < t_ms && sys.step()) {
    }
}

}  // namespace test_support
