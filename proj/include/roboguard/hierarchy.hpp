/// @file hierarchy.hpp
/// @brief System graph, predicate grouping of nodes, and linear composition of
/// per-node attributes into group-level streams.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/bus.hpp"
#include "roboguard/features.hpp"

namespace roboguard {

struct SystemGraph {
    std::set<std::string> nodes;
    std::set<std::pair<std::string, std::string>> edges;  // (publisher, subscriber)
    std::map<std::string, std::set<std::string>> tags;

    std::size_t out_degree(const std::string& node) const;
    std::size_t in_degree(const std::string& node) const;
};

/// Edge (i, j) iff i publishes a topic j subscribes to; wildcard subscribers
/// follow every topic. Self-loops are dropped.
SystemGraph build_graph(const BusDirectory& directory);

/// Boolean tag expression: '|' separates alternatives, '&' joins required
/// tags, '!' negates one tag. "arm-joint", "cpu-reporting & !actuator".
class TagPredicate {
public:
    TagPredicate() = default;
    explicit TagPredicate(std::string_view expr);
    bool operator()(const std::set<std::string>& tags) const;
    const std::string& text() const { return text_; }

private:
    std::string text_;
    std::vector<std::vector<std::pair<std::string, bool>>> any_of_;  // (tag, wanted)
};

struct GroupRule {
    std::string name;
    TagPredicate predicate;
};

struct Group {
    std::string name;
    std::string predicate;
    std::set<std::string> members;
};

struct GroupingScheme {
    std::vector<Group> groups;
    std::set<std::string> ungrouped;
    std::vector<std::string> warnings;

    const Group* group(std::string_view name) const;
    std::optional<std::string> group_of(const std::string& node) const;
};

/// First matching rule wins, so every node lands in at most one group.
GroupingScheme apply_grouping(const SystemGraph& graph, const std::vector<GroupRule>& rules);

/// Throws LengthMismatch when the vectors differ in length.
double compose(const std::vector<double>& b, const std::vector<double>& phi);

struct DecomposabilityVerdict {
    bool linear = false;
    double residual_fraction = 0.0;  // 1 - R^2 of the total regressed on phi^T B
    std::vector<std::pair<std::size_t, std::size_t>> coupled;  // member pairs with a deterministic relation
    std::string evidence;
};

/// `samples[k]` is the member attribute vector B at time k, `totals[k]` the
/// observed group total. Linear iff the residual fraction is below tau and no
/// member stream is (up to a quadratic) a function of another. Throws
/// LengthMismatch and InsufficientSamples (< 30).
DecomposabilityVerdict decomposability_test(const std::vector<std::vector<double>>& samples, const std::vector<double>& totals,
                                            const std::vector<double>& phi, double tau = 0.05);

/// Group-level stream: phi^T B over one attribute of every member. The
/// attribute is a feature selector with "{node}" standing for the member id.
struct CompositeSpec {
    std::string name;
    std::string group;
    std::string attribute;
    std::vector<double> phi;  // empty: all ones, in member order
};

struct HierarchyConfig {
    std::vector<GroupRule> rules;
    std::vector<CompositeSpec> composites;
};

HierarchyConfig parse_hierarchy_yaml(std::string_view text);
HierarchyConfig load_hierarchy_file(const std::string& path);

/// Graph, grouping and composites kept current with the bus directory.
class Hierarchy {
public:
    explicit Hierarchy(HierarchyConfig cfg = {});

    /// Rebuilds graph and grouping when the directory epoch moved.
    bool refresh(const BusDirectory& directory);

    /// Writes every composite whose member attributes are all present.
    void annotate(FeatureFrame& frame) const;

    /// Topics a composite reads.
    std::set<std::string> composite_topics(const std::string& name) const;
    /// Topics read by a selector, resolving composites.
    std::set<std::string> selector_topics(std::string_view selector) const;

    const SystemGraph& graph() const { return graph_; }
    const GroupingScheme& scheme() const { return scheme_; }
    const HierarchyConfig& config() const { return cfg_; }

    /// Streams a per-node monitor would watch versus streams watched with the
    /// composites in place of their members.
    std::pair<std::size_t, std::size_t> stream_counts() const;

    nlohmann::json to_json() const;

private:
    std::vector<std::string> member_selectors(const CompositeSpec& c) const;

    HierarchyConfig cfg_;
    std::optional<std::uint64_t> epoch_;
    SystemGraph graph_;
    GroupingScheme scheme_;
};

nlohmann::json to_json(const SystemGraph& g);
nlohmann::json to_json(const GroupingScheme& s);

}  // namespace roboguard
