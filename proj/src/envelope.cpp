#include "roboguard/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "roboguard/error.hpp"

namespace roboguard {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::string EnvelopeDim::topic() const {
    auto dot = source.rfind('.');
    return dot == std::string::npos ? source : source.substr(0, dot);
}

std::string EnvelopeDim::field() const {
    auto dot = source.rfind('.');
    return dot == std::string::npos ? std::string() : source.substr(dot + 1);
}

const EnvelopeDim* Envelope::dim(std::string_view name) const {
    for (const auto& d : dims)
        if (d.name == name) return &d;
    return nullptr;
}

void validate_envelope(const Envelope& env) {
    if (env.dims.empty()) throw Error(ErrorCode::InvalidEnvelope, "envelope has no dimensions");
    for (const auto& d : env.dims) {
        const double chain[] = {d.oe_lo, d.fos_lo, d.n_lo, d.n_hi, d.fos_hi, d.oe_hi};
        for (double x : chain)
            if (!std::isfinite(x)) throw Error(ErrorCode::InvalidEnvelope, "dim '" + d.name + "' has a non-finite bound");
        if (!std::is_sorted(std::begin(chain), std::end(chain)))
            throw Error(ErrorCode::InvalidEnvelope, "dim '" + d.name + "' violates N within FOS within OE");
    }
}

void validate_risk_model(const RiskModel& m, std::size_t dims) {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, "risk model: " + why); };
    if (!(m.p >= 1.0) || !std::isfinite(m.p)) bad("p must be >= 1");
    if (!m.weights.empty() && m.weights.size() != dims) bad("one weight per dimension");
    for (double w : m.weights)
        if (!(w >= 0) || !std::isfinite(w)) bad("weights must be non-negative");
    if (!(m.lambda_per_s >= 0)) bad("lambda must be non-negative");
    if (!(m.r_star > 0)) bad("r_star must be positive");
    if (m.count_m < 1) bad("count_m must be >= 1");
    if (m.count_window_ms <= 0) bad("count_window_ms must be positive");
}

Exceedance exceedances(const std::vector<double>& phi, const Envelope& env) {
    if (phi.size() != env.dims.size())
        throw Error(ErrorCode::DimensionMismatch,
                    "state has " + std::to_string(phi.size()) + " values for " + std::to_string(env.dims.size()) + " dims");
    Exceedance out;
    out.per_dim.resize(phi.size(), 0.0);
    for (std::size_t i = 0; i < phi.size(); ++i) {
        const auto& d = env.dims[i];
        const double x = phi[i];
        double e = 0.0;
        if (x > d.fos_hi) {
            if (d.oe_hi == d.fos_hi) out.unbounded = true;
            else e = (x - d.fos_hi) / (d.oe_hi - d.fos_hi);
        } else if (x < d.fos_lo) {
            if (d.oe_lo == d.fos_lo) out.unbounded = true;
            else e = (d.fos_lo - x) / (d.fos_lo - d.oe_lo);
        }
        if (x > d.oe_hi || x < d.oe_lo || !std::isfinite(x)) {
            out.out_of_envelope = true;
            e = 1.0;
        }
        out.per_dim[i] = std::min(e, 1.0);
        if (out.unbounded && (x > d.fos_hi || x < d.fos_lo)) out.per_dim[i] = 1.0;
    }
    return out;
}

double risk_from_exceedance(const Exceedance& e, const RiskModel& model) {
    if (e.unbounded) return kInf;
    double acc = 0.0;
    for (std::size_t i = 0; i < e.per_dim.size(); ++i) {
        if (e.per_dim[i] <= 0.0) continue;
        const double w = model.weights.empty() ? 1.0 : model.weights[i];
        const double r = w * std::pow(e.per_dim[i], model.p);
        acc = model.combine == Combine::Max ? std::max(acc, r) : acc + r;
    }
    return acc;
}

double instantaneous_risk(const std::vector<double>& phi, const Envelope& env, const RiskModel& model) {
    return risk_from_exceedance(exceedances(phi, env), model);
}

std::string_view to_string(TriggerRule r) { return r == TriggerRule::Integral ? "integral" : "count"; }

nlohmann::json to_json(const EStopDecision& d) {
    return {{"t_ms", d.t_ms},
            {"accumulated_risk", std::isfinite(d.accumulated_risk) ? nlohmann::json(d.accumulated_risk) : nlohmann::json("inf")},
            {"triggering_rule", to_string(d.rule)},
            {"contributing", d.contributing},
            {"phi", d.phi},
            {"excursions", d.excursions},
            {"out_of_envelope", d.out_of_envelope}};
}

std::optional<EStopDecision> accumulate(double risk, std::int64_t dt_ms, std::int64_t t_ms, const Exceedance& e,
                                        const Envelope& env, const RiskModel& model, AccumulatorState& state,
                                        const std::vector<double>* phi) {
    if (std::isinf(risk)) {
        state.R = kInf;
    } else if (dt_ms > 0) {
        const double dt = static_cast<double>(dt_ms) / 1000.0;
        state.R = state.R * std::exp(-model.lambda_per_s * dt) + risk * dt;
    }
    const bool outside = std::any_of(e.per_dim.begin(), e.per_dim.end(), [](double x) { return x > 0.0; }) || e.unbounded;
    if (outside && !state.outside) state.exits.push_back(t_ms);
    state.outside = outside;
    while (!state.exits.empty() && state.exits.front() <= t_ms - model.count_window_ms) state.exits.pop_front();

    if (state.latched) return std::nullopt;
    std::optional<TriggerRule> rule;
    if (state.R >= model.r_star) rule = TriggerRule::Integral;
    else if (static_cast<int>(state.exits.size()) >= model.count_m) rule = TriggerRule::Count;
    if (!rule) return std::nullopt;

    state.latched = true;
    EStopDecision d;
    d.t_ms = t_ms;
    d.accumulated_risk = state.R;
    d.rule = *rule;
    d.excursions = static_cast<int>(state.exits.size());
    d.out_of_envelope = e.out_of_envelope;
    for (std::size_t i = 0; i < e.per_dim.size() && i < env.dims.size(); ++i) {
        if (e.per_dim[i] > 0.0) d.contributing[env.dims[i].name] = e.per_dim[i];
        if (phi && i < phi->size()) d.phi[env.dims[i].name] = (*phi)[i];
    }
    return d;
}

EnvelopeMonitor::EnvelopeMonitor(Envelope env, RiskModel model) : env_(std::move(env)), model_(std::move(model)) {
    validate_envelope(env_);
    validate_risk_model(model_, env_.dims.size());
    reset();
}

void EnvelopeMonitor::reset() {
    phi_.assign(env_.dims.size(), 0.0);
    // Unseen dims start at the middle of N, which is inside FOS.
    for (std::size_t i = 0; i < env_.dims.size(); ++i) phi_[i] = 0.5 * (env_.dims[i].n_lo + env_.dims[i].n_hi);
    seen_.assign(env_.dims.size(), false);
    last_ = Exceedance{std::vector<double>(env_.dims.size(), 0.0), false, false};
    last_risk_ = 0.0;
    last_t_.reset();
    state_ = {};
    decision_.reset();
}

bool EnvelopeMonitor::feeds_on(const std::string& topic) const {
    return std::any_of(env_.dims.begin(), env_.dims.end(), [&](const auto& d) { return d.topic() == topic; });
}

std::optional<EStopDecision> EnvelopeMonitor::on_message(const Message& msg) {
    if (msg.validity == Validity::RejectedRange) return std::nullopt;
    bool touched = false;
    auto phi = phi_;
    for (std::size_t i = 0; i < env_.dims.size(); ++i) {
        const auto& d = env_.dims[i];
        if (d.topic() != msg.topic) continue;
        auto it = msg.payload.find(d.field());
        if (it == msg.payload.end()) continue;
        if (auto x = as_number(it->second)) {
            phi[i] = *x;
            seen_[i] = true;
            touched = true;
        }
    }
    if (!touched) return std::nullopt;
    return update(phi, msg.t_ms);
}

std::optional<EStopDecision> EnvelopeMonitor::update(const std::vector<double>& phi, std::int64_t t_ms) {
    last_ = exceedances(phi, env_);
    phi_ = phi;
    last_risk_ = risk_from_exceedance(last_, model_);
    if (last_.out_of_envelope) ++oe_count_;
    const std::int64_t dt = last_t_ ? t_ms - *last_t_ : 0;
    last_t_ = t_ms;
    auto d = accumulate(last_risk_, dt, t_ms, last_, env_, model_, state_, &phi_);
    if (d) decision_ = d;
    return d;
}

nlohmann::json EnvelopeMonitor::risk_json() const {
    nlohmann::json dims = nlohmann::json::array();
    for (std::size_t i = 0; i < env_.dims.size(); ++i)
        dims.push_back({{"name", env_.dims[i].name},
                        {"unit", env_.dims[i].unit},
                        {"phi", phi_[i]},
                        {"exceedance", last_.per_dim.at(i)}});
    auto finite = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("inf"); };
    return {{"accumulated_risk", finite(state_.R)},
            {"instantaneous_risk", finite(last_risk_)},
            {"r_star", model_.r_star},
            {"excursions_in_window", state_.exits.size()},
            {"latched", state_.latched},
            {"out_of_envelope", last_.out_of_envelope},
            {"dims", dims}};
}

nlohmann::json EnvelopeMonitor::save_state() const {
    nlohmann::json j = {{"phi", phi_},
                        {"R", std::isfinite(state_.R) ? state_.R : -1.0},
                        {"exits", state_.exits},
                        {"outside", state_.outside},
                        {"latched", state_.latched},
                        {"oe_count", oe_count_}};
    j["last_t"] = last_t_ ? nlohmann::json(*last_t_) : nlohmann::json(nullptr);
    return j;
}

void EnvelopeMonitor::load_state(const nlohmann::json& j) {
    phi_ = j.at("phi").get<std::vector<double>>();
    const double r = j.at("R").get<double>();
    state_.R = r < 0 ? kInf : r;
    state_.exits.clear();
    for (auto t : j.at("exits")) state_.exits.push_back(t.get<std::int64_t>());
    state_.outside = j.at("outside").get<bool>();
    state_.latched = j.at("latched").get<bool>();
    oe_count_ = j.at("oe_count").get<std::uint64_t>();
    if (j.at("last_t").is_null()) last_t_.reset();
    else last_t_ = j.at("last_t").get<std::int64_t>();
    last_ = exceedances(phi_, env_);
    last_risk_ = risk_from_exceedance(last_, model_);
}

namespace {

double sse_of(const std::vector<Exceedance>& ex, const std::vector<double>& y, const RiskModel& m) {
    double s = 0.0;
    for (std::size_t k = 0; k < ex.size(); ++k) {
        const double r = risk_from_exceedance(ex[k], m);
        s += (r - y[k]) * (r - y[k]);
    }
    return s;
}

template <class F>
double golden_min(F f, double lo, double hi, int iters = 60) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

// Non-negative weights for a fixed p by projected coordinate descent with a
// one-dimensional search per weight.
std::vector<double> fit_weights(const std::vector<Exceedance>& ex, const std::vector<double>& y, RiskModel m) {
    const std::size_t dims = ex.front().per_dim.size();
    m.weights.assign(dims, 1.0);
    for (int sweep = 0; sweep < 8; ++sweep) {
        for (std::size_t i = 0; i < dims; ++i) {
            auto f = [&](double w) {
                auto mm = m;
                mm.weights[i] = w;
                return sse_of(ex, y, mm);
            };
            const double w = golden_min(f, 0.0, 4.0, 40);
            m.weights[i] = f(0.0) <= f(w) ? 0.0 : w;
        }
    }
    return m.weights;
}

}  // namespace

SurfaceFit learn_surface(const std::vector<LabeledExcursion>& samples, const Envelope& env, const RiskModel& defaults) {
    validate_envelope(env);
    if (samples.size() < 10)
        throw Error(ErrorCode::InsufficientData, "need at least 10 labeled excursions, got " + std::to_string(samples.size()));
    std::vector<Exceedance> ex;
    std::vector<double> y;
    for (const auto& s : samples) {
        if (!(s.outcome >= 0.0 && s.outcome <= 1.0)) throw Error(ErrorCode::MalformedInput, "outcome must lie in [0, 1]");
        ex.push_back(exceedances(s.phi, env));
        ex.back().unbounded = false;
        y.push_back(s.outcome);
    }

    SurfaceFit fit;
    fit.p = defaults.p;
    fit.weights = defaults.weights.empty() ? std::vector<double>(env.dims.size(), 1.0) : defaults.weights;
    const bool signal = std::any_of(y.begin(), y.end(), [](double v) { return v > 0.0; });
    const bool excursions = std::any_of(ex.begin(), ex.end(), [](const auto& e) {
        return std::any_of(e.per_dim.begin(), e.per_dim.end(), [](double x) { return x > 0.0 && x < 1.0; });
    });
    if (!signal || !excursions) {
        fit.degenerate = true;
        auto m = defaults;
        m.weights = fit.weights;
        fit.sse = sse_of(ex, y, m);
        return fit;
    }

    auto objective = [&](double p) {
        auto m = defaults;
        m.p = p;
        m.weights = fit_weights(ex, y, m);
        return sse_of(ex, y, m);
    };
    // Coarse grid brackets the minimum, golden section refines it.
    double best_p = 1.0, best = objective(1.0);
    for (double p = 1.25; p <= 8.0 + 1e-12; p += 0.25) {
        const double v = objective(p);
        if (v < best) {
            best = v;
            best_p = p;
        }
    }
    fit.p = golden_min(objective, std::max(1.0, best_p - 0.25), std::min(8.0, best_p + 0.25), 30);
    auto m = defaults;
    m.p = fit.p;
    fit.weights = fit_weights(ex, y, m);
    m.weights = fit.weights;
    fit.sse = sse_of(ex, y, m);
    return fit;
}

EnvelopeConfig parse_envelope_yaml(std::string_view text) {
    EnvelopeConfig cfg;
    try {
        YAML::Node root = YAML::Load(std::string(text));
        if (!root.IsMap() || !root["dims"]) throw Error(ErrorCode::InvalidEnvelope, "envelope file needs a 'dims' list");
        for (const auto& n : root["dims"]) {
            EnvelopeDim d;
            d.name = n["name"].as<std::string>();
            d.unit = n["unit"].as<std::string>("");
            d.source = n["source"].as<std::string>("");
            auto pair = [&](const char* key, double& lo, double& hi) {
                if (!n[key] || !n[key].IsSequence() || n[key].size() != 2)
                    throw Error(ErrorCode::InvalidEnvelope, "dim '" + d.name + "' needs " + key + ": [lo, hi]");
                lo = n[key][0].as<double>();
                hi = n[key][1].as<double>();
            };
            pair("n", d.n_lo, d.n_hi);
            pair("fos", d.fos_lo, d.fos_hi);
            pair("oe", d.oe_lo, d.oe_hi);
            cfg.envelope.dims.push_back(std::move(d));
        }
        if (auto r = root["risk"]) {
            auto& m = cfg.model;
            const auto combine = r["combine"].as<std::string>("max");
            if (combine == "max") m.combine = Combine::Max;
            else if (combine == "sum") m.combine = Combine::Sum;
            else throw Error(ErrorCode::InvalidConfig, "combine must be max or sum");
            m.p = r["p"].as<double>(m.p);
            if (r["weights"]) m.weights = r["weights"].as<std::vector<double>>();
            m.lambda_per_s = r["lambda"].as<double>(m.lambda_per_s);
            m.r_star = r["r_star"].as<double>(m.r_star);
            m.count_m = r["count_m"].as<int>(m.count_m);
            m.count_window_ms = r["count_window_ms"].as<std::int64_t>(m.count_window_ms);
        }
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::InvalidEnvelope, std::string("envelope file: ") + e.what());
    }
    validate_envelope(cfg.envelope);
    validate_risk_model(cfg.model, cfg.envelope.dims.size());
    return cfg;
}

EnvelopeConfig load_envelope_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidEnvelope, "cannot read envelope file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_envelope_yaml(ss.str());
}

nlohmann::json to_json(const Envelope& env) {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : env.dims)
        dims.push_back({{"name", d.name},
                        {"unit", d.unit},
                        {"source", d.source},
                        {"n", {d.n_lo, d.n_hi}},
                        {"fos", {d.fos_lo, d.fos_hi}},
                        {"oe", {d.oe_lo, d.oe_hi}}});
    return {{"dims", dims}};
}

}  // namespace roboguard
