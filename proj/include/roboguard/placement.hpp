/// @file placement.hpp
/// @brief Where the feature and detector pipeline runs: at each site only, all
/// at a hub, or reduced locally and merged at the hub. Links are simulated
/// in-process with latency, loss and outages.
///
/// The hub merges per-site partials in window order, so hub_spoke and
/// local_reduction produce identical frames over lossless links.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/detectors.hpp"
#include "roboguard/envelope.hpp"
#include "roboguard/features.hpp"

namespace roboguard {

/// PeerToPeer is reserved; plans using it are rejected.
enum class PlacementMode { LocalOnly, HubSpoke, LocalReduction, PeerToPeer };

std::string_view to_string(PlacementMode m);
PlacementMode placement_mode_from_string(std::string_view s);

struct LinkModel {
    std::int64_t latency_ms = 0;
    double drop_p = 0.0;
    std::vector<std::pair<std::int64_t, std::int64_t>> outages;  // [start, end)

    bool scheduled_up(std::int64_t t_ms) const;
};

struct SitePlan {
    std::string name;
    bool hub = false;
    std::vector<std::string> topics;  // exact names, or prefixes ending in '*'
    LinkModel link;                   // link to the hub; unused for the hub itself
};

struct PlacementPlan {
    PlacementMode mode = PlacementMode::LocalReduction;
    std::vector<SitePlan> sites;
    std::size_t backfill_cap_windows = 60;
    std::uint64_t seed = 0;

    const SitePlan* hub() const;
    const SitePlan* site(std::string_view name) const;
    /// Exact names win over prefixes, longer prefixes over shorter. Throws UnassignedTopic.
    const std::string& site_of(const std::string& topic) const;
};

/// Throws InvalidPlan.
void validate_plan(const PlacementPlan& plan);
PlacementPlan parse_plan_yaml(std::string_view text);
PlacementPlan load_plan_file(const std::string& path);
nlohmann::json to_json(const PlacementPlan& plan);

struct RouteResult {
    std::map<std::string, std::vector<Message>> per_site;
    std::uint64_t forwarded_records = 0;
    std::uint64_t forwarded_partials = 0;
    std::uint64_t forwarded_bytes = 0;
    std::vector<std::int64_t> merge_schedule;  // window starts, in hub merge order
};

/// Static routing of an ordered record stream over lossless, always-up links.
RouteResult route(const std::vector<Message>& records, const PlacementPlan& plan, const FeatureConfig& features = {});

struct PlacementMetrics {
    std::uint64_t forwarded_bytes = 0;  // data payloads only
    std::uint64_t control_bytes = 0;    // watermarks and gap notices
    std::uint64_t forwarded_records = 0;
    std::uint64_t forwarded_partials = 0;
    std::uint64_t merged_windows = 0;
    std::uint64_t incomplete_windows = 0;
    std::uint64_t dropped_partials = 0;    // windows evicted from a full back-fill buffer
    std::uint64_t dropped_records = 0;     // raw records evicted with them
    std::uint64_t dropped_in_transit = 0;  // payloads lost to drop_p
    std::uint64_t backfilled_payloads = 0;
    double fallback_seconds = 0.0;
};

nlohmann::json to_json(const PlacementMetrics& m);

struct SiteStatus {
    bool link_up = true;
    bool fallback = false;
    std::size_t buffered_windows = 0;
};

struct DegradationState {
    PlacementMode mode = PlacementMode::LocalReduction;
    std::map<std::string, SiteStatus> sites;
    std::set<std::string> core_set;  // detectors and e-stop that keep running at sites
};

nlohmann::json to_json(const DegradationState& s);

struct HubFrame {
    FeatureFrame frame;
    std::vector<std::string> missing_sites;
};

struct SiteEvent {
    std::string site;
    AnomalyEvent event;
};

class PlacementRunner {
public:
    PlacementRunner(PlacementPlan plan, FeatureConfig features, std::vector<DetectorConfig> detectors = {},
                    std::optional<EnvelopeConfig> envelope = std::nullopt);

    /// Records must arrive in time order. Throws UnassignedTopic.
    void ingest(const Message& msg);
    void advance_to(std::int64_t t_ms);
    /// Closes windows up to `t_end_ms` and drains every link.
    void finish(std::int64_t t_end_ms);

    /// Operator or transport link change, in addition to the plan's schedule.
    /// Throws UnknownSite.
    DegradationState on_link_event(const std::string& site, bool up, std::int64_t t_ms);

    const std::vector<HubFrame>& hub_frames() const { return hub_frames_; }
    const std::vector<AnomalyEvent>& hub_events() const { return hub_events_; }
    const std::vector<FeatureFrame>& site_frames(const std::string& site) const;
    /// Events from site-local detectors while the site was the decision maker
    /// (local_only mode, or fallback).
    const std::vector<SiteEvent>& site_events() const { return site_events_; }
    const std::vector<std::pair<std::string, EStopDecision>>& estops() const { return estops_; }

    PlacementMetrics metrics() const;
    DegradationState state() const;
    const PlacementPlan& plan() const { return plan_; }

private:
    struct LinkItem {
        enum class Kind { Record, Partial, Watermark, Gap } kind = Kind::Record;
        std::int64_t arrive_ms = 0;
        std::int64_t window_start = 0;
        Message record;
        PartialAggregate partial;
        std::int64_t through_ms = 0;
        std::vector<std::int64_t> gaps;
    };
    struct Site {
        SitePlan plan;
        WindowAggregator agg;
        std::vector<Detector> detectors;
        std::optional<EnvelopeMonitor> envelope;
        std::vector<FeatureFrame> frames;
        bool manual_down = false;
        bool link_up = true;
        bool fallback = false;
        std::int64_t fallback_since = 0;
        std::int64_t fallback_ms = 0;
        std::deque<LinkItem> buffer;
        std::vector<std::int64_t> gaps;
        std::deque<LinkItem> in_flight;
        std::mt19937_64 rng;
    };
    struct HubInput {
        WindowAggregator replica;
        std::map<std::int64_t, PartialAggregate> partials;
        std::set<std::int64_t> gaps;
        std::int64_t through = 0;
    };

    void step_links(std::int64_t t);
    void close_site_windows(Site& s, std::int64_t t);
    void send(Site& s, LinkItem item, std::int64_t t);
    void transmit(Site& s, LinkItem item, std::int64_t t);
    void receive(std::size_t site, LinkItem item);
    void deliver(std::int64_t t);
    void merge_ready();
    std::int64_t window_of(std::int64_t t) const;

    PlacementPlan plan_;
    FeatureConfig features_;
    std::vector<Site> sites_;
    std::map<std::string, std::size_t> index_;
    std::vector<HubInput> hub_in_;
    std::vector<Detector> hub_detectors_;
    std::int64_t next_merge_;
    std::int64_t now_;
    std::vector<HubFrame> hub_frames_;
    std::vector<AnomalyEvent> hub_events_;
    std::vector<SiteEvent> site_events_;
    std::vector<std::pair<std::string, EStopDecision>> estops_;
    PlacementMetrics metrics_;
    std::set<std::string> core_;
};

}  // namespace roboguard
