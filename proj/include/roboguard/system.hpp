/// @file system.hpp
/// @brief The assembled runtime: simulated robot on the bus, all-topic
/// capture, the detection pipeline, snapshot recovery and safe mode.
///
/// One lock serializes simulation steps and operator commands, so a command
/// always lands between two ticks. Listeners run under that lock and must not
/// call back into the system.

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/bus.hpp"
#include "roboguard/capture.hpp"
#include "roboguard/pipeline.hpp"
#include "roboguard/recovery.hpp"
#include "roboguard/simbot.hpp"

namespace roboguard {

enum class SystemMode { Full, Safe };
std::string_view to_string(SystemMode m);

struct SystemConfig {
    Scenario scenario;
    PipelineConfig pipeline;
    RecoveryConfig recovery;
    SimRates rates;
    bool safe_mode_on_estop = true;
    std::int64_t snapshot_interval_ms = 5000;  // 0 disables periodic snapshots
    /// Nodes restored automatically when an anomaly involves them.
    std::set<std::string> auto_restore;
    std::size_t capture_queue_depth = 1 << 16;
};

struct SafeModeReport {
    bool changed = false;  // false: already in the requested mode
    SystemMode mode = SystemMode::Full;
    std::int64_t t_ms = 0;
    std::string trigger;  // estop | escalation | operator
    std::optional<Range> speed_clamp;
    std::vector<std::string> paused;
    bool warm_restarted = false;  // exit only
};

nlohmann::json to_json(const SafeModeReport& r);

/// Node ids the system registers with recovery.
inline constexpr std::string_view kControllerNode = "controller";
inline constexpr std::string_view kDetectorNode = "detectors";
inline constexpr std::string_view kEnvelopeNode = "envelope";

class System {
public:
    using EventListener = std::function<void(const std::string& channel, const nlohmann::json& event)>;

    /// A null sink keeps the trace in memory.
    explicit System(SystemConfig cfg, std::shared_ptr<TraceSink> sink = nullptr);
    ~System();
    System(const System&) = delete;
    System& operator=(const System&) = delete;

    /// Advances one tick and processes what it published. False once ended.
    bool step();
    /// Runs to the end of the scenario and closes the last window.
    void run_to_end();
    /// Closes the last window and stops capture; idempotent.
    void finish();

    /// Paces steps in a background thread; speed 0 runs unpaced.
    void start(double speed = 1.0);
    void stop();
    bool running() const { return runner_active_; }
    bool ended() const;

    SafeModeReport enter_safe_mode(const std::string& trigger);
    SafeModeReport exit_safe_mode();
    SystemMode mode() const;

    std::uint64_t inject(InjectionKind kind, double magnitude, std::int64_t duration_ms);
    Snapshot snapshot(const std::string& node);
    RestoreReport restore(const std::string& node, const FaultSignature& sig);
    Alarm feedback(std::uint64_t alarm_id, FeedbackAction action);

    std::int64_t now_ms() const;
    std::vector<Alarm> alarms(std::optional<AlarmState> state = std::nullopt) const;
    std::vector<FeatureFrame> frames(const std::optional<std::string>& topic = std::nullopt, std::size_t limit = 0) const;
    ScenarioReport report() const;
    CaptureStats capture_stats() const;
    /// In-memory trace; empty when writing to an external sink.
    Trace trace() const;

    nlohmann::json health_json() const;
    nlohmann::json metrics_json() const;
    nlohmann::json graph_json() const;
    nlohmann::json risk_json() const;
    nlohmann::json alarm_model_json() const;
    nlohmann::json recovery_json() const;

    /// Channels: alarms, risk, frames, graph, status.
    void on_event(EventListener l);

    /// Direct access for tests and tools; take lock() around use while a
    /// runner thread is active.
    std::unique_lock<std::recursive_mutex> lock() const { return std::unique_lock(mu_); }
    Bus& bus() { return bus_; }
    Simulator& sim() { return *sim_; }
    DetectionPipeline& pipeline() { return pipeline_; }
    RecoveryManager& recovery() { return recovery_; }
    const SystemConfig& config() const { return cfg_; }
    std::uint64_t restores() const { return restores_; }
    std::uint64_t escalations() const { return escalations_; }
    const std::vector<SafeModeReport>& mode_changes() const { return mode_log_; }

private:
    void handle(const PipelineStep& out);
    void periodic_snapshots(std::int64_t t_ms);
    void auto_restore(const AnomalyEvent& e);
    SafeModeReport enter_locked(const std::string& trigger, std::int64_t t_ms);
    std::set<std::string> node_topics(const std::string& node) const;
    std::optional<Range> speed_clamp() const;
    void emit(const std::string& channel, const nlohmann::json& event);
    void runner_loop(double speed);

    SystemConfig cfg_;
    mutable std::recursive_mutex mu_;
    Bus bus_;
    std::shared_ptr<TraceSink> sink_;
    std::shared_ptr<MemorySink> memory_;
    std::unique_ptr<Capture> capture_;
    std::unique_ptr<Simulator> sim_;
    Subscription feed_;
    DetectionPipeline pipeline_;
    RecoveryManager recovery_;
    SystemMode mode_ = SystemMode::Full;
    std::vector<SafeModeReport> mode_log_;
    std::map<std::string, std::int64_t> last_snapshot_;
    std::uint64_t restores_ = 0;
    std::uint64_t escalations_ = 0;
    bool finished_ = false;
    std::vector<EventListener> listeners_;

    std::thread runner_;
    std::atomic<bool> runner_active_{false};
    std::atomic<bool> runner_stop_{false};
};

}  // namespace roboguard
