/// @file recovery.hpp
/// @brief Best-known-state snapshots with restore, a guard against
/// snapshot-restore cycles, and decimated shadow monitors that can be promoted.
///
/// Node state is copied between windows, so a snapshot never pauses ingestion
/// for more than the copy itself.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/detectors.hpp"
#include "roboguard/features.hpp"

namespace roboguard {

struct Snapshot {
    std::string node;
    std::int64_t t_ms = 0;
    nlohmann::json state;
    std::int64_t health_ms = 0;  // anomaly-free time preceding the capture
};

nlohmann::json to_json(const Snapshot& s);
Snapshot snapshot_from_json(const nlohmann::json& j);

/// Unit of reproducibility for a fault: the same triple recurring means the
/// restore did not remove the cause.
struct FaultSignature {
    std::string node;
    std::string detector_id;
    std::string kind;

    auto operator<=>(const FaultSignature&) const = default;
    std::string key() const { return node + "|" + detector_id + "|" + kind; }
};

struct RecoveryConfig {
    std::int64_t health_window_ms = 5000;
    int k_max = 3;
    std::int64_t w_cycle_ms = 60000;
    std::string snapshot_dir;  // empty: keep snapshots in memory only
};

/// At most k_max restores per signature inside any W_cycle span. The attempt
/// that would exceed it trips the guard, which stays tripped until reset.
class CycleGuard {
public:
    enum class Verdict { Allowed, Tripped, Disabled };

    explicit CycleGuard(int k_max = 3, std::int64_t w_cycle_ms = 60000);

    /// Records an allowed restore; a trip is reported exactly once.
    Verdict attempt(const FaultSignature& sig, std::int64_t t_ms);
    bool disabled(const FaultSignature& sig) const;
    int restores_in_window(const FaultSignature& sig, std::int64_t t_ms) const;
    void reset(const FaultSignature& sig);

    nlohmann::json to_json() const;

private:
    int k_max_;
    std::int64_t w_cycle_ms_;
    std::map<FaultSignature, std::deque<std::int64_t>> history_;
    std::set<FaultSignature> tripped_;
};

struct RestoreReport {
    std::string node;
    FaultSignature signature;
    bool restored = false;
    bool escalated = false;
    int restores_in_window = 0;
    std::int64_t snapshot_t_ms = 0;
};

nlohmann::json to_json(const RestoreReport& r);

struct NodeHooks {
    std::function<nlohmann::json()> save;
    std::function<void(const nlohmann::json&)> load;
};

class RecoveryManager {
public:
    using EscalationHandler = std::function<void(const FaultSignature&, int restores, std::int64_t t_ms)>;

    explicit RecoveryManager(RecoveryConfig cfg = {});

    void register_node(const std::string& node, NodeHooks hooks);
    std::vector<std::string> nodes() const;

    void note_anomaly(const std::string& node, std::int64_t t_ms);
    bool healthy(const std::string& node, std::int64_t t_ms) const;

    /// Throws UnknownNode, or NodeUnhealthy when an anomaly involving the node
    /// falls inside the health window.
    Snapshot take_snapshot(const std::string& node, std::int64_t t_ms);
    std::optional<Snapshot> latest(const std::string& node) const;

    /// Throws UnknownNode, NoSnapshot, or CycleGuardTripped once the guard for
    /// this signature has already tripped. The tripping attempt itself does
    /// not restore; it escalates and reports.
    RestoreReport restore(const std::string& node, const FaultSignature& sig, std::int64_t t_ms);

    void on_escalation(EscalationHandler h);
    CycleGuard& guard() { return guard_; }
    const RecoveryConfig& config() const { return cfg_; }

    /// Picks up the newest persisted snapshot of every registered node.
    std::size_t load_persisted();

    nlohmann::json to_json() const;

private:
    RecoveryConfig cfg_;
    mutable std::mutex mu_;
    std::map<std::string, NodeHooks> hooks_;
    std::map<std::string, std::int64_t> last_anomaly_;
    std::map<std::string, Snapshot> latest_;
    CycleGuard guard_;
    std::vector<EscalationHandler> escalation_;
};

/// Feature extractor plus detectors consuming one message stream. A rate
/// scale d lets a node fed every d-th message report full-rate estimates.
class MonitorNode {
public:
    struct Output {
        FeatureFrame frame;
        std::vector<AnomalyEvent> events;
        std::string producer;
        bool degraded = false;
    };

    MonitorNode(std::string name, FeatureConfig features, std::vector<DetectorConfig> detectors, double rate_scale = 1.0);

    std::vector<Output> ingest(const Message& msg);
    std::vector<Output> advance_to(std::int64_t t_ms);

    const std::string& name() const { return name_; }
    std::uint64_t processed() const { return processed_; }
    std::uint64_t frames() const { return frames_; }
    double rate_scale() const { return scale_; }
    void set_rate_scale(double s) { scale_ = s; }
    /// Marks the next finished frame as degraded.
    void mark_degraded() { degraded_next_ = true; }

    /// Test hook standing in for a corrupted process: it stops counting input.
    void poison(bool on) { poisoned_ = on; }

    nlohmann::json save_state() const;
    void load_state(const nlohmann::json& j);

private:
    std::vector<Output> finish(std::vector<FeatureFrame> frames);

    std::string name_;
    FeatureExtractor extractor_;
    std::vector<Detector> detectors_;
    double scale_;
    std::uint64_t processed_ = 0;
    std::uint64_t frames_ = 0;
    bool poisoned_ = false;
    bool degraded_next_ = false;
};

struct ShadowSpec {
    std::string primary;
    int d = 2;
};

struct PromotionReport {
    std::string promoted;
    std::string demoted;
    std::int64_t requested_ms = 0;
    std::int64_t full_rate_from_ms = 0;  // next window boundary
};

/// A primary monitor with a shadow fed every d-th message (1-based). Only the
/// serving node's frames are returned.
class ShadowPair {
public:
    ShadowPair(ShadowSpec spec, FeatureConfig features, std::vector<DetectorConfig> detectors);

    std::vector<MonitorNode::Output> ingest(const Message& msg);
    std::vector<MonitorNode::Output> advance_to(std::int64_t t_ms);

    bool shadow_warm() const;
    /// Throws ShadowCold before the shadow has finished a window. The shadow
    /// serves at once; it switches to full rate at the next window boundary.
    /// The old primary restarts as the shadow from the promoted state.
    PromotionReport promote(std::int64_t t_ms);

    MonitorNode& serving() { return *serving_; }
    MonitorNode& shadow() { return *shadow_; }
    const std::vector<std::uint64_t>& shadow_inputs() const { return shadow_inputs_; }

private:
    ShadowSpec spec_;
    FeatureConfig features_;
    std::vector<DetectorConfig> detectors_;
    std::unique_ptr<MonitorNode> serving_;
    std::unique_ptr<MonitorNode> shadow_;
    std::uint64_t index_ = 0;
    bool serving_decimated_ = false;
    std::int64_t full_rate_from_ = 0;
    std::vector<std::uint64_t> shadow_inputs_;
    mutable std::mutex mu_;
};

/// Shadow input rule: message i (1-based) reaches the shadow iff i % d == 0.
bool shadow_receives(std::uint64_t index, int d);

}  // namespace roboguard
