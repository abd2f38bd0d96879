/// @file simbot.hpp
/// @brief Deterministic differential-drive scenario with labeled fault injection.
///
/// A simulated operator steers a unicycle-model robot around a waypoint loop.
/// Each stream draws from its own seeded generator, so an injection on one
/// topic never shifts the random values of another.

#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/bus.hpp"

namespace roboguard {

enum class InjectionKind { JerkyDirection, ControllerDisconnect, CounterintuitivePath, VaryingSpeed, SensorSplash };

std::string_view to_string(InjectionKind kind);
/// Accepts full names ("jerky_direction") and short aliases ("jerky").
InjectionKind injection_kind_from_string(std::string_view s);
/// Topics whose streams an injection of this kind perturbs.
std::set<std::string> perturbed_topics(InjectionKind kind);

struct Waypoint {
    double x = 0.0;
    double y = 0.0;
};

struct Injection {
    InjectionKind kind = InjectionKind::JerkyDirection;
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    double magnitude = 1.0;
};

struct Scenario {
    std::vector<Waypoint> path;
    double nominal_speed = 0.5;
    std::int64_t duration_ms = 60000;
    std::int64_t tick_ms = 10;
    std::uint64_t seed = 0;
    std::vector<Injection> injections;
};

struct GroundTruthLabel {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    InjectionKind kind = InjectionKind::JerkyDirection;
    bool expected_detection = true;
};

struct ScenarioReport {
    std::map<std::string, std::uint64_t> messages_published;
    std::vector<GroundTruthLabel> labels;
};

void validate_scenario(const Scenario& s);
Scenario parse_scenario_yaml(std::string_view text);
Scenario load_scenario(const std::string& path);
std::string scenario_to_yaml(const Scenario& s);

nlohmann::json to_json(const GroundTruthLabel& label);
GroundTruthLabel label_from_json(const nlohmann::json& j);

/// Default magnitude used when an injection is requested by kind only.
double default_magnitude(InjectionKind kind);

/// Places one injection of each kind in disjoint, seeded slots after
/// `warmup_ms`. Throws InvalidScenario when the slots do not fit.
void schedule_injections(Scenario& s, const std::vector<InjectionKind>& kinds, std::uint64_t seed,
                         std::int64_t warmup_ms = 20000, std::int64_t length_ms = 5000);

/// Node ids and topic schemas of the simulated robot.
const std::vector<std::string>& simbot_nodes();
std::vector<TopicSchema> simbot_schemas();

struct SimRates {
    std::int64_t cmd_vel_period_ms = 50;
    std::int64_t odom_period_ms = 50;
    std::int64_t odom_phase_ms = 20;
    std::int64_t scan_period_ms = 100;
    std::int64_t scan_phase_ms = 30;
    std::int64_t battery_period_ms = 1000;
    std::int64_t cpu_period_ms = 1000;
};

class Simulator {
public:
    Simulator(Bus& bus, Scenario scenario, SimRates rates = {});
    ~Simulator();
    Simulator(const Simulator&) = delete;
    Simulator& operator=(const Simulator&) = delete;

    /// Advances one tick. Returns false once the scenario has ended.
    bool step();
    void run_to_end();

    bool running() const;
    std::int64_t now_ms() const { return now_ms_; }
    const Scenario& scenario() const { return scenario_; }

    /// Schedules an injection starting at the next tick; thread-safe.
    std::uint64_t inject_live(InjectionKind kind, double magnitude, std::int64_t duration_ms);

    /// Safe-mode restriction: disables command perturbations and clamps the
    /// commanded linear speed. nullopt lifts it.
    void set_speed_clamp(std::optional<Range> clamp);
    bool clamped() const { return clamp_.has_value(); }

    ScenarioReport report() const;

    nlohmann::json save_state() const;
    void load_state(const nlohmann::json& j);

private:
    struct Pose {
        double x = 0, y = 0, theta = 0;
    };
    struct Command {
        double linear = 0, angular = 0;
    };

    bool active(InjectionKind kind, std::int64_t t, const Injection** which = nullptr) const;
    Command teleop_command(std::int64_t t);
    void publish(const std::string& topic, Payload payload);

    Bus& bus_;
    Scenario scenario_;
    SimRates rates_;
    std::map<std::string, TopicHandle> handles_;
    Subscription base_cmd_;               // base drives from what arrives on /cmd_vel
    std::vector<Subscription> consumers_;  // other node inputs, drained every tick
    std::map<std::string, std::uint64_t> counts_;
    std::vector<GroundTruthLabel> labels_;
    std::vector<Injection> schedule_;

    mutable std::mutex live_mu_;
    std::deque<Injection> pending_;

    std::int64_t now_ms_ = 0;
    std::atomic<bool> finished_{false};
    Pose pose_;
    Command held_;  // last command received by the base
    std::size_t target_ = 1;
    std::vector<std::size_t> detour_;  // shuffled waypoint order while a counterintuitive injection runs
    std::size_t detour_pos_ = 0;
    std::int64_t detour_injection_start_ = -1;
    int jerky_sign_ = 1;
    double speed_factor_ = 1.0;
    std::int64_t speed_factor_until_ = -1;
    std::optional<Range> clamp_;

    std::mt19937_64 teleop_rng_, inject_rng_, battery_rng_, scan_rng_;
    std::map<std::string, std::mt19937_64> cpu_rng_;
};

ScenarioReport run_scenario(const Scenario& scenario, Bus& bus);

}  // namespace roboguard
