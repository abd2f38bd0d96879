#include "roboguard/detectors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "roboguard/error.hpp"

namespace roboguard {

std::string_view to_string(DetectorKind k) {
    switch (k) {
        case DetectorKind::Extreme: return "extreme";
        case DetectorKind::Isolated: return "isolated";
        case DetectorKind::Abnormal: return "abnormal";
    }
    return "extreme";
}

DetectorKind detector_kind_from_string(std::string_view s) {
    if (s == "extreme") return DetectorKind::Extreme;
    if (s == "isolated") return DetectorKind::Isolated;
    if (s == "abnormal") return DetectorKind::Abnormal;
    throw Error(ErrorCode::InvalidConfig, "unknown detector kind '" + std::string(s) + "'");
}

std::string DetectorConfig::target_name() const {
    std::string out;
    for (const auto& t : target) {
        if (!out.empty()) out += ",";
        out += t;
    }
    if (kind == DetectorKind::Abnormal) out += "/" + denominator;
    return out;
}

void validate_detector(const DetectorConfig& c) {
    auto bad = [&](const std::string& why) { throw Error(ErrorCode::InvalidConfig, "detector '" + c.id + "': " + why); };
    if (c.id.empty()) bad("id is required");
    if (c.target.empty()) bad("target is required");
    if (!std::isfinite(c.t)) bad("t must be finite");
    if (c.n < 0) bad("n must be >= 0");
    if (c.baseline_window_count < 2) bad("baseline_window_count must be >= 2");
    if (!(c.min_std > 0)) bad("min_std must be positive");
    if (c.kind != DetectorKind::Isolated && c.target.size() != 1) bad("only isolated detectors take several targets");
    if (c.kind == DetectorKind::Isolated && c.baseline_window_count < static_cast<std::size_t>(c.n) + 1)
        bad("history shorter than n + 1");
    if (c.kind == DetectorKind::Abnormal) {
        if (c.denominator.empty()) bad("abnormal detectors need a denominator");
        if (!(c.band > 0) || !std::isfinite(c.band)) bad("band must be positive");
    }
}

nlohmann::json to_json(const AnomalyEvent& e) {
    return {{"t_ms", e.t_ms},
            {"window_end_ms", e.window_end_ms},
            {"detector_id", e.detector_id},
            {"target", e.target},
            {"kind", to_string(e.kind)},
            {"score", e.score},
            {"evidence", e.evidence},
            {"topics", e.topics}};
}

nlohmann::json to_json(const AssumptionChange& c) {
    nlohmann::json j = {{"t_ms", c.t_ms}, {"name", c.name}, {"value", c.value}, {"topics", c.topics}};
    j["observed"] = c.observed ? nlohmann::json(*c.observed) : nlohmann::json(nullptr);
    return j;
}

void Baseline::push(double x) {
    values_.push_back(x);
    while (values_.size() > capacity_) values_.pop_front();
}

double Baseline::mean() const {
    if (values_.empty()) return 0.0;
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

double Baseline::variance() const {
    if (values_.size() < 2) return 0.0;
    const double m = mean();
    double acc = 0.0;
    for (double v : values_) acc += (v - m) * (v - m);
    return acc / static_cast<double>(values_.size());
}

double Baseline::stddev() const { return std::sqrt(variance()); }

BaselineStats stats_of(const Baseline& b) { return {b.size(), b.mean(), b.stddev()}; }

std::optional<AnomalyEvent> score_extreme(double x, const BaselineStats& baseline, const DetectorConfig& config,
                                          std::int64_t t_ms) {
    if (baseline.count < 2 || !std::isfinite(x)) return std::nullopt;
    const double z = (x - baseline.mean) / std::max(baseline.std, config.min_std);
    if (!(std::abs(z) > config.t)) return std::nullopt;
    AnomalyEvent e;
    e.t_ms = t_ms;
    e.detector_id = config.id;
    e.target = config.target_name();
    e.kind = DetectorKind::Extreme;
    e.score = std::abs(z);
    e.evidence = {{"value", x}, {"mean", baseline.mean}, {"std", baseline.std}, {"z", z}};
    return e;
}

std::optional<AnomalyEvent> score_isolated(const std::vector<double>& point, const std::vector<std::vector<double>>& history,
                                           const DetectorConfig& config, std::int64_t t_ms) {
    const auto n = static_cast<std::size_t>(config.n);
    if (history.size() < n + 1) return std::nullopt;
    std::vector<double> dist;
    dist.reserve(history.size());
    std::size_t within = 0;
    for (const auto& h : history) {
        if (h.size() != point.size()) throw Error(ErrorCode::DimensionMismatch, "history vector dimension differs from point");
        double acc = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) acc += (h[i] - point[i]) * (h[i] - point[i]);
        const double d = std::sqrt(acc);
        if (d <= config.t) ++within;
        dist.push_back(d);
    }
    if (within > n) return std::nullopt;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n), dist.end());
    AnomalyEvent e;
    e.t_ms = t_ms;
    e.detector_id = config.id;
    e.target = config.target_name();
    e.kind = DetectorKind::Isolated;
    e.score = dist[n];
    e.evidence = {{"neighbors_within_t", static_cast<double>(within)}, {"knn_distance", dist[n]}};
    return e;
}

AbnormalResult score_abnormal(double numerator, double denominator, const RatioModel& model, const DetectorConfig& config,
                              std::int64_t t_ms) {
    AbnormalResult r;
    if (denominator == 0.0 || !std::isfinite(denominator) || !std::isfinite(numerator)) {
        r.ratio_defined = false;
        return r;
    }
    const double ratio = numerator / denominator;
    r.ratio = ratio;
    const double dev = std::abs(ratio - model.expected);
    if (!(dev > model.band)) return r;
    AnomalyEvent e;
    e.t_ms = t_ms;
    e.detector_id = config.id;
    e.target = config.target_name();
    e.kind = DetectorKind::Abnormal;
    e.score = dev / model.band;
    e.evidence = {{"numerator", numerator}, {"denominator", denominator}, {"ratio", ratio}, {"expected", model.expected}};
    r.event = std::move(e);
    return r;
}

AbnormalResult score_abnormal(const FeatureFrame& frame, const DetectorConfig& config, const RatioModel& model) {
    auto num = select_feature(frame, config.target.at(0));
    auto den = select_feature(frame, config.denominator);
    if (!num || !den) return AbnormalResult{std::nullopt, false, std::nullopt};
    auto r = score_abnormal(*num, *den, model, config, frame.window.start_ms);
    if (r.event) r.event->window_end_ms = frame.window.end_ms;
    return r;
}

ValidityResult filter_validity(const Message& msg, const TopicSchema& schema) {
    auto field = first_range_violation(schema, msg.payload);
    if (!field) return {};
    auto it = msg.payload.find(*field);
    double v = it == msg.payload.end() ? 0.0 : as_number(it->second).value_or(0.0);
    return {false, *field, v};
}

Detector::Detector(DetectorConfig config) : cfg_(std::move(config)), scalar_(cfg_.baseline_window_count) {
    validate_detector(cfg_);
    if (cfg_.topics.empty()) {
        for (const auto& s : cfg_.target) {
            auto ts = selector_topics(s);
            cfg_.topics.insert(ts.begin(), ts.end());
        }
        auto ts = selector_topics(cfg_.denominator);
        cfg_.topics.insert(ts.begin(), ts.end());
    }
}

std::size_t Detector::baseline_size() const {
    return cfg_.kind == DetectorKind::Isolated ? history_.size() : scalar_.size();
}

bool Detector::warmed_up() const {
    if (cfg_.kind == DetectorKind::Abnormal && cfg_.expected_ratio) return true;
    return baseline_size() >= cfg_.baseline_window_count;
}

std::optional<std::vector<double>> Detector::read(const FeatureFrame& f) const {
    std::vector<double> v;
    v.reserve(cfg_.target.size());
    for (const auto& s : cfg_.target) {
        auto x = select_feature(f, s);
        if (!x || !std::isfinite(*x)) return std::nullopt;
        v.push_back(*x);
    }
    return v;
}

std::optional<AnomalyEvent> Detector::observe(const FeatureFrame& frame) {
    std::optional<AnomalyEvent> ev;
    switch (cfg_.kind) {
        case DetectorKind::Extreme: {
            auto v = read(frame);
            if (!v) return std::nullopt;
            if (warmed_up()) ev = score_extreme(v->front(), stats_of(scalar_), cfg_, frame.window.start_ms);
            if (!ev) scalar_.push(v->front());
            break;
        }
        case DetectorKind::Isolated: {
            auto v = read(frame);
            if (!v) return std::nullopt;
            if (warmed_up()) {
                // z-scale every dimension by the history so t is unit-free
                const std::size_t dims = v->size();
                std::vector<double> mean(dims, 0.0), sd(dims, 0.0);
                const double m = static_cast<double>(history_.size());
                for (const auto& h : history_)
                    for (std::size_t i = 0; i < dims; ++i) mean[i] += h[i] / m;
                for (const auto& h : history_)
                    for (std::size_t i = 0; i < dims; ++i) sd[i] += (h[i] - mean[i]) * (h[i] - mean[i]) / m;
                for (auto& s : sd) s = std::max(std::sqrt(s), cfg_.min_std);
                auto scale = [&](const std::vector<double>& x) {
                    std::vector<double> out(dims);
                    for (std::size_t i = 0; i < dims; ++i) out[i] = (x[i] - mean[i]) / sd[i];
                    return out;
                };
                std::vector<std::vector<double>> hist;
                hist.reserve(history_.size());
                for (const auto& h : history_) hist.push_back(scale(h));
                ev = score_isolated(scale(*v), hist, cfg_, frame.window.start_ms);
                if (ev)
                    for (std::size_t i = 0; i < dims; ++i) ev->evidence[cfg_.target[i]] = (*v)[i];
            }
            if (!ev) {
                history_.push_back(*v);
                while (history_.size() > cfg_.baseline_window_count) history_.pop_front();
            }
            break;
        }
        case DetectorKind::Abnormal: {
            RatioModel model{cfg_.expected_ratio.value_or(scalar_.mean()), cfg_.band};
            auto r = score_abnormal(frame, cfg_, model);
            if (r.ratio_defined != ratio_defined_) {
                ratio_defined_ = r.ratio_defined;
                notes_.push_back({frame.window.start_ms, cfg_.id + ".ratio_defined", r.ratio_defined, r.ratio, cfg_.topics});
            }
            if (!r.ratio) return std::nullopt;
            if (warmed_up()) ev = r.event;
            if (!ev && !cfg_.expected_ratio) scalar_.push(*r.ratio);
            break;
        }
    }
    if (ev) {
        ev->window_end_ms = frame.window.end_ms;
        ev->topics = cfg_.topics;
    }
    return ev;
}

std::vector<AssumptionChange> Detector::take_notes() {
    std::vector<AssumptionChange> out;
    out.swap(notes_);
    return out;
}

nlohmann::json Detector::save_state() const {
    return {{"scalar", scalar_.values()}, {"history", history_}, {"ratio_defined", ratio_defined_}};
}

void Detector::load_state(const nlohmann::json& j) {
    scalar_ = Baseline(cfg_.baseline_window_count);
    for (double v : j.at("scalar").get<std::vector<double>>()) scalar_.push(v);
    history_.clear();
    for (auto& h : j.at("history").get<std::vector<std::vector<double>>>()) history_.push_back(std::move(h));
    ratio_defined_ = j.at("ratio_defined").get<bool>();
    notes_.clear();
}

namespace {

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

// rate(/cmd_vel) -> rate:/cmd_vel; already-normalized selectors pass through.
std::string normalize_selector(std::string s) {
    auto open = s.find('(');
    if (open != std::string::npos && !s.empty() && s.back() == ')')
        return s.substr(0, open) + ":" + trim(std::string_view(s).substr(open + 1, s.size() - open - 2));
    return s;
}

bool compare(double x, CompareOp op, double v) {
    switch (op) {
        case CompareOp::Lt: return x < v;
        case CompareOp::Le: return x <= v;
        case CompareOp::Gt: return x > v;
        case CompareOp::Ge: return x >= v;
        case CompareOp::Eq: return x == v;
        case CompareOp::Ne: return x != v;
    }
    return false;
}

std::string_view op_text(CompareOp op) {
    switch (op) {
        case CompareOp::Lt: return "<";
        case CompareOp::Le: return "<=";
        case CompareOp::Gt: return ">";
        case CompareOp::Ge: return ">=";
        case CompareOp::Eq: return "==";
        case CompareOp::Ne: return "!=";
    }
    return ">";
}

}  // namespace

AssumptionSpec parse_assumption(const std::string& name, std::string_view expr, int min_hold) {
    static const std::pair<std::string_view, CompareOp> ops[] = {{"<=", CompareOp::Le}, {">=", CompareOp::Ge},
                                                                  {"==", CompareOp::Eq}, {"!=", CompareOp::Ne},
                                                                  {"<", CompareOp::Lt},  {">", CompareOp::Gt}};
    // Selectors contain '>' only in cooc:/a>/b, so take the operator surrounded by spaces first.
    for (const auto& [text, op] : ops) {
        auto pos = expr.find(" " + std::string(text) + " ");
        if (pos == std::string_view::npos) continue;
        AssumptionSpec a;
        a.name = name;
        a.selector = normalize_selector(trim(expr.substr(0, pos)));
        a.op = op;
        a.min_hold = min_hold;
        try {
            a.value = std::stod(trim(expr.substr(pos + text.size() + 2)));
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "assumption '" + name + "': bad comparison value in '" + std::string(expr) + "'");
        }
        if (min_hold < 1) throw Error(ErrorCode::InvalidConfig, "assumption '" + name + "': min_hold must be >= 1");
        return a;
    }
    throw Error(ErrorCode::InvalidConfig, "assumption '" + name + "': expected '<selector> <op> <value>', got '" + std::string(expr) + "'");
}

std::string to_string(const AssumptionSpec& a) {
    std::ostringstream os;
    os << a.selector << " " << op_text(a.op) << " " << a.value;
    return os.str();
}

void AssumptionSet::add(AssumptionSpec spec) {
    if (spec.min_hold < 1) throw Error(ErrorCode::InvalidConfig, "min_hold must be >= 1");
    AssumptionState s;
    s.spec = std::move(spec);
    states_.push_back(std::move(s));
}

std::vector<AssumptionChange> AssumptionSet::check(const FeatureFrame& frame) {
    std::vector<AssumptionChange> out;
    const auto t = frame.window.start_ms;
    for (auto& s : states_) {
        auto x = select_feature(frame, s.spec.selector);
        const bool v = x && compare(*x, s.spec.op, s.spec.value);
        if (!s.initialized) {
            s.initialized = true;
            s.truth = s.candidate = v;
            s.last_change_ms = t;
            s.candidate_run = 0;
            continue;
        }
        if (v == s.truth) {
            s.candidate_run = 0;
            continue;
        }
        if (s.candidate_run == 0 || s.candidate != v) {
            s.candidate = v;
            s.candidate_run = 0;
            s.candidate_since = t;
        }
        if (++s.candidate_run >= s.spec.min_hold) {
            s.truth = v;
            s.last_change_ms = s.candidate_since;
            s.candidate_run = 0;
            auto topics = selector_topics(s.spec.selector);
            out.push_back({s.candidate_since, s.spec.name, v, x, topics});
        }
    }
    return out;
}

nlohmann::json AssumptionSet::save_state() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : states_)
        arr.push_back({{"name", s.spec.name},
                       {"initialized", s.initialized},
                       {"truth", s.truth},
                       {"last_change_ms", s.last_change_ms},
                       {"candidate", s.candidate},
                       {"candidate_run", s.candidate_run},
                       {"candidate_since", s.candidate_since}});
    return arr;
}

void AssumptionSet::load_state(const nlohmann::json& j) {
    for (const auto& e : j) {
        for (auto& s : states_) {
            if (s.spec.name != e.at("name").get<std::string>()) continue;
            s.initialized = e.at("initialized").get<bool>();
            s.truth = e.at("truth").get<bool>();
            s.last_change_ms = e.at("last_change_ms").get<std::int64_t>();
            s.candidate = e.at("candidate").get<bool>();
            s.candidate_run = e.at("candidate_run").get<int>();
            s.candidate_since = e.at("candidate_since").get<std::int64_t>();
        }
    }
}

std::vector<AssumptionChange> check_assumptions(const FeatureFrame& frame, AssumptionSet& assumptions) {
    return assumptions.check(frame);
}

DetectorSuiteConfig parse_detector_yaml(std::string_view text) {
    DetectorSuiteConfig suite;
    try {
        YAML::Node root = YAML::Load(std::string(text));
        YAML::Node list = root.IsSequence() ? root : root["detectors"];
        if (list) {
            for (const auto& n : list) {
                DetectorConfig c;
                c.id = n["id"].as<std::string>();
                c.kind = detector_kind_from_string(n["kind"].as<std::string>());
                if (n["target"].IsSequence()) c.target = n["target"].as<std::vector<std::string>>();
                else c.target = {normalize_selector(n["target"].as<std::string>())};
                for (auto& t : c.target) t = normalize_selector(t);
                c.t = n["t"].as<double>(c.t);
                c.n = n["n"].as<int>(c.n);
                c.baseline_window_count = n["baseline_window_count"].as<std::size_t>(c.baseline_window_count);
                c.min_std = n["min_std"].as<double>(c.min_std);
                if (n["denominator"]) c.denominator = normalize_selector(n["denominator"].as<std::string>());
                if (n["expected_ratio"]) c.expected_ratio = n["expected_ratio"].as<double>();
                c.band = n["band"].as<double>(c.band);
                if (n["topics"]) {
                    auto ts = n["topics"].as<std::vector<std::string>>();
                    c.topics = {ts.begin(), ts.end()};
                }
                validate_detector(c);
                suite.detectors.push_back(std::move(c));
            }
        }
        if (root.IsMap() && root["assumptions"]) {
            for (const auto& n : root["assumptions"])
                suite.assumptions.push_back(
                    parse_assumption(n["name"].as<std::string>(), n["expr"].as<std::string>(), n["min_hold"].as<int>(1)));
        }
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("detector config: ") + e.what());
    }
    return suite;
}

DetectorSuiteConfig load_detector_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read detector config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_detector_yaml(ss.str());
}

nlohmann::json to_json(const DetectorConfig& c) {
    nlohmann::json j = {{"id", c.id},
                        {"kind", to_string(c.kind)},
                        {"target", c.target},
                        {"t", c.t},
                        {"n", c.n},
                        {"baseline_window_count", c.baseline_window_count},
                        {"min_std", c.min_std},
                        {"topics", c.topics}};
    if (c.kind == DetectorKind::Abnormal) {
        j["denominator"] = c.denominator;
        j["band"] = c.band;
        if (c.expected_ratio) j["expected_ratio"] = *c.expected_ratio;
    }
    return j;
}

}  // namespace roboguard
