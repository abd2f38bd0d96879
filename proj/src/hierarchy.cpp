#include "roboguard/hierarchy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "roboguard/error.hpp"

namespace roboguard {

std::size_t SystemGraph::out_degree(const std::string& node) const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [&](const auto& e) { return e.first == node; }));
}

std::size_t SystemGraph::in_degree(const std::string& node) const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [&](const auto& e) { return e.second == node; }));
}

SystemGraph build_graph(const BusDirectory& directory) {
    SystemGraph g;
    g.nodes = directory.nodes();
    for (const auto& [node, tags] : directory.node_tags) g.tags[node] = {tags.begin(), tags.end()};
    for (const auto& [pub, topics] : directory.publishers) {
        for (const auto& topic : topics) {
            for (const auto& [sub, wanted] : directory.subscribers) {
                if (sub == pub) continue;
                if (wanted.count(topic) || wanted.count("*")) g.edges.insert({pub, sub});
            }
        }
    }
    return g;
}

namespace {

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace

TagPredicate::TagPredicate(std::string_view expr) : text_(trim(expr)) {
    for (const auto& alt : split(expr, '|')) {
        std::vector<std::pair<std::string, bool>> all;
        for (auto term : split(alt, '&')) {
            bool wanted = true;
            if (!term.empty() && term.front() == '!') {
                wanted = false;
                term = trim(std::string_view(term).substr(1));
            }
            if (term.empty()) throw Error(ErrorCode::InvalidConfig, "empty tag in predicate '" + text_ + "'");
            all.emplace_back(term, wanted);
        }
        any_of_.push_back(std::move(all));
    }
}

bool TagPredicate::operator()(const std::set<std::string>& tags) const {
    for (const auto& all : any_of_) {
        bool ok = std::all_of(all.begin(), all.end(), [&](const auto& t) { return tags.count(t.first) == (t.second ? 1u : 0u); });
        if (ok) return true;
    }
    return false;
}

const Group* GroupingScheme::group(std::string_view name) const {
    for (const auto& g : groups)
        if (g.name == name) return &g;
    return nullptr;
}

std::optional<std::string> GroupingScheme::group_of(const std::string& node) const {
    for (const auto& g : groups)
        if (g.members.count(node)) return g.name;
    return std::nullopt;
}

GroupingScheme apply_grouping(const SystemGraph& graph, const std::vector<GroupRule>& rules) {
    GroupingScheme s;
    for (const auto& r : rules) s.groups.push_back({r.name, r.predicate.text(), {}});
    static const std::set<std::string> no_tags;
    for (const auto& node : graph.nodes) {
        auto it = graph.tags.find(node);
        const auto& tags = it == graph.tags.end() ? no_tags : it->second;
        bool placed = false;
        for (std::size_t i = 0; i < rules.size() && !placed; ++i) {
            if (rules[i].predicate(tags)) {
                s.groups[i].members.insert(node);
                placed = true;
            }
        }
        if (!placed) s.ungrouped.insert(node);
    }
    for (const auto& g : s.groups)
        if (g.members.empty()) s.warnings.push_back("EmptyGroup: " + g.name);
    return s;
}

double compose(const std::vector<double>& b, const std::vector<double>& phi) {
    if (b.size() != phi.size())
        throw Error(ErrorCode::LengthMismatch,
                    "behavior vector has " + std::to_string(b.size()) + " entries, constants " + std::to_string(phi.size()));
    return std::inner_product(b.begin(), b.end(), phi.begin(), 0.0);
}

namespace {

// Least squares by normal equations with partial pivoting; tiny systems only.
std::vector<double> lstsq(const std::vector<std::vector<double>>& X, const std::vector<double>& y) {
    const std::size_t k = X.front().size();
    std::vector<std::vector<double>> A(k, std::vector<double>(k + 1, 0.0));
    for (std::size_t r = 0; r < X.size(); ++r)
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) A[i][j] += X[r][i] * X[r][j];
            A[i][k] += X[r][i] * y[r];
        }
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < k; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        std::swap(A[c], A[piv]);
        if (std::abs(A[c][c]) < 1e-300) continue;
        for (std::size_t r = 0; r < k; ++r) {
            if (r == c) continue;
            const double f = A[r][c] / A[c][c];
            for (std::size_t j = c; j <= k; ++j) A[r][j] -= f * A[c][j];
        }
    }
    std::vector<double> beta(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) beta[i] = std::abs(A[i][i]) < 1e-300 ? 0.0 : A[i][k] / A[i][i];
    return beta;
}

// 1 - R^2 of y fitted on the given regressor columns (intercept included).
double residual_fraction(const std::vector<std::vector<double>>& cols, const std::vector<double>& y) {
    const std::size_t n = y.size();
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sst = 0.0;
    for (double v : y) sst += (v - mean) * (v - mean);
    if (sst <= 1e-12 * std::max(1.0, mean * mean) * static_cast<double>(n)) return 0.0;
    std::vector<std::vector<double>> X(n);
    for (std::size_t r = 0; r < n; ++r) {
        X[r].push_back(1.0);
        for (const auto& c : cols) X[r].push_back(c[r]);
    }
    auto beta = lstsq(X, y);
    double sse = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double fit = 0.0;
        for (std::size_t i = 0; i < beta.size(); ++i) fit += beta[i] * X[r][i];
        sse += (y[r] - fit) * (y[r] - fit);
    }
    return std::clamp(sse / sst, 0.0, 1.0);
}

}  // namespace

DecomposabilityVerdict decomposability_test(const std::vector<std::vector<double>>& samples, const std::vector<double>& totals,
                                            const std::vector<double>& phi, double tau) {
    if (samples.size() != totals.size())
        throw Error(ErrorCode::LengthMismatch, "samples and totals differ in length");
    if (samples.size() < 30)
        throw Error(ErrorCode::InsufficientSamples, "need at least 30 aligned samples, got " + std::to_string(samples.size()));
    const std::size_t k = phi.size();
    for (const auto& s : samples)
        if (s.size() != k) throw Error(ErrorCode::LengthMismatch, "sample width differs from the constants");

    DecomposabilityVerdict v;
    std::vector<double> composed;
    composed.reserve(samples.size());
    for (const auto& s : samples) composed.push_back(compose(s, phi));
    v.residual_fraction = residual_fraction({composed}, totals);

    // A member that is a function of another breaks the independence that
    // makes the sum meaningful, even when the total happens to fit.
    std::vector<std::vector<double>> col(k, std::vector<double>(samples.size()));
    for (std::size_t r = 0; r < samples.size(); ++r)
        for (std::size_t i = 0; i < k; ++i) col[i][r] = samples[r][i];
    auto varies = [](const std::vector<double>& c) {
        auto [lo, hi] = std::minmax_element(c.begin(), c.end());
        return *hi - *lo > 1e-12 * std::max(1.0, std::abs(*hi));
    };
    for (std::size_t i = 0; i < k; ++i) {
        if (!varies(col[i])) continue;  // a constant stream is independent of everything
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j || !varies(col[j])) continue;
            std::vector<double> sq(samples.size());
            for (std::size_t r = 0; r < sq.size(); ++r) sq[r] = col[i][r] * col[i][r];
            if (residual_fraction({col[i], sq}, col[j]) < tau) {
                const std::pair<std::size_t, std::size_t> pair{std::min(i, j), std::max(i, j)};
                if (std::find(v.coupled.begin(), v.coupled.end(), pair) == v.coupled.end()) v.coupled.push_back(pair);
            }
        }
    }
    v.linear = v.residual_fraction < tau && v.coupled.empty();
    std::ostringstream os;
    os << "residual_fraction=" << v.residual_fraction << " tau=" << tau;
    for (const auto& [a, b] : v.coupled) os << " coupled(" << a << "," << b << ")";
    v.evidence = os.str();
    return v;
}

HierarchyConfig parse_hierarchy_yaml(std::string_view text) {
    HierarchyConfig cfg;
    try {
        YAML::Node root = YAML::Load(std::string(text));
        if (root["groups"])
            for (const auto& n : root["groups"])
                cfg.rules.push_back({n["name"].as<std::string>(), TagPredicate(n["match"].as<std::string>())});
        if (root["composites"])
            for (const auto& n : root["composites"]) {
                CompositeSpec c;
                c.name = n["name"].as<std::string>();
                c.group = n["group"].as<std::string>();
                c.attribute = n["attribute"].as<std::string>();
                if (n["phi"]) c.phi = n["phi"].as<std::vector<double>>();
                cfg.composites.push_back(std::move(c));
            }
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("grouping config: ") + e.what());
    }
    for (const auto& c : cfg.composites)
        if (std::none_of(cfg.rules.begin(), cfg.rules.end(), [&](const auto& r) { return r.name == c.group; }))
            throw Error(ErrorCode::InvalidConfig, "composite '" + c.name + "' names unknown group '" + c.group + "'");
    return cfg;
}

HierarchyConfig load_hierarchy_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read grouping config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_hierarchy_yaml(ss.str());
}

Hierarchy::Hierarchy(HierarchyConfig cfg) : cfg_(std::move(cfg)) {}

bool Hierarchy::refresh(const BusDirectory& directory) {
    if (epoch_ && *epoch_ == directory.epoch) return false;
    epoch_ = directory.epoch;
    graph_ = build_graph(directory);
    scheme_ = apply_grouping(graph_, cfg_.rules);
    return true;
}

std::vector<std::string> Hierarchy::member_selectors(const CompositeSpec& c) const {
    std::vector<std::string> out;
    const Group* g = scheme_.group(c.group);
    if (!g) return out;
    for (const auto& m : g->members) {
        std::string sel = c.attribute;
        for (auto pos = sel.find("{node}"); pos != std::string::npos; pos = sel.find("{node}", pos + m.size()))
            sel.replace(pos, 6, m);
        out.push_back(std::move(sel));
    }
    return out;
}

void Hierarchy::annotate(FeatureFrame& frame) const {
    for (const auto& c : cfg_.composites) {
        auto sels = member_selectors(c);
        if (sels.empty()) continue;
        std::vector<double> b;
        for (const auto& s : sels) {
            auto x = select_feature(frame, s);
            if (!x) break;
            b.push_back(*x);
        }
        if (b.size() != sels.size()) continue;
        std::vector<double> phi = c.phi.empty() ? std::vector<double>(b.size(), 1.0) : c.phi;
        if (phi.size() != b.size()) continue;
        frame.composites[c.name] = compose(b, phi);
    }
}

std::set<std::string> Hierarchy::composite_topics(const std::string& name) const {
    std::set<std::string> out;
    for (const auto& c : cfg_.composites) {
        if (c.name != name) continue;
        for (const auto& s : member_selectors(c)) {
            auto ts = roboguard::selector_topics(s);
            out.insert(ts.begin(), ts.end());
        }
    }
    return out;
}

std::set<std::string> Hierarchy::selector_topics(std::string_view selector) const {
    if (selector.rfind("composite:", 0) == 0) return composite_topics(std::string(selector.substr(10)));
    return roboguard::selector_topics(selector);
}

std::pair<std::size_t, std::size_t> Hierarchy::stream_counts() const {
    std::size_t individual = 0, grouped = 0;
    for (const auto& c : cfg_.composites) {
        const auto n = member_selectors(c).size();
        individual += n;
        grouped += n > 0 ? 1 : 0;
    }
    return {individual, grouped};
}

nlohmann::json to_json(const SystemGraph& g) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [a, b] : g.edges) edges.push_back({a, b});
    nlohmann::json tags = nlohmann::json::object();
    for (const auto& [n, t] : g.tags) tags[n] = t;
    return {{"nodes", g.nodes}, {"edges", edges}, {"tags", tags}};
}

nlohmann::json to_json(const GroupingScheme& s) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : s.groups) groups.push_back({{"name", g.name}, {"predicate", g.predicate}, {"members", g.members}});
    return {{"groups", groups}, {"ungrouped", s.ungrouped}, {"warnings", s.warnings}};
}

nlohmann::json Hierarchy::to_json() const {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : cfg_.composites)
        comps.push_back({{"name", c.name}, {"group", c.group}, {"attribute", c.attribute}, {"members", member_selectors(c)}});
    auto [individual, grouped] = stream_counts();
    return {{"graph", roboguard::to_json(graph_)},
            {"grouping", roboguard::to_json(scheme_)},
            {"composites", comps},
            {"streams", {{"individual", individual}, {"grouped", grouped}}}};
}

}  // namespace roboguard
