/// @file envelope.hpp
/// @brief Operating-envelope risk: nested bounds N in FOS in OE, a risk
/// surface outside FOS, leaky accumulation and explainable emergency stops.

#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/bus.hpp"

namespace roboguard {

struct EnvelopeDim {
    std::string name;
    std::string unit;
    std::string source;  // "topic.field" the dimension reads; empty when fed directly
    double n_lo = 0, n_hi = 0;
    double fos_lo = 0, fos_hi = 0;
    double oe_lo = 0, oe_hi = 0;

    std::string topic() const;
    std::string field() const;
};

struct Envelope {
    std::vector<EnvelopeDim> dims;

    const EnvelopeDim* dim(std::string_view name) const;
};

/// Throws InvalidEnvelope unless oe_lo <= fos_lo <= n_lo <= n_hi <= fos_hi <= oe_hi per dim.
void validate_envelope(const Envelope& env);

enum class Combine { Max, Sum };

struct RiskModel {
    Combine combine = Combine::Max;
    double p = 2.0;
    std::vector<double> weights;  // empty means all ones
    double lambda_per_s = 0.1;
    double r_star = 1.0;
    int count_m = 5;
    std::int64_t count_window_ms = 10000;
};

void validate_risk_model(const RiskModel& m, std::size_t dims);

struct Exceedance {
    std::vector<double> per_dim;  // normalized, clamped to 1 beyond OE
    bool out_of_envelope = false;
    bool unbounded = false;  // a degenerate FOS-to-OE span was crossed
};

/// Per-dim normalized distance outside FOS, with the FOS-to-OE span as unit.
Exceedance exceedances(const std::vector<double>& phi, const Envelope& env);

/// combine_i(w_i * e_i^p); +infinity when a degenerate dimension is crossed.
double instantaneous_risk(const std::vector<double>& phi, const Envelope& env, const RiskModel& model);
double risk_from_exceedance(const Exceedance& e, const RiskModel& model);

enum class TriggerRule { Integral, Count };
std::string_view to_string(TriggerRule r);

struct EStopDecision {
    std::int64_t t_ms = 0;
    double accumulated_risk = 0.0;
    TriggerRule rule = TriggerRule::Integral;
    std::map<std::string, double> contributing;  // dims with nonzero exceedance
    std::map<std::string, double> phi;
    int excursions = 0;
    bool out_of_envelope = false;
};

nlohmann::json to_json(const EStopDecision& d);

struct AccumulatorState {
    double R = 0.0;
    std::deque<std::int64_t> exits;  // FOS-exit times inside the count window
    bool outside = false;
    bool latched = false;
};

/// Advances the leaky integral by one step of `dt_ms` at `risk` and counts a
/// FOS exit when the state leaves FOS. Fires at most once until the state is
/// reset.
std::optional<EStopDecision> accumulate(double risk, std::int64_t dt_ms, std::int64_t t_ms, const Exceedance& e,
                                        const Envelope& env, const RiskModel& model, AccumulatorState& state,
                                        const std::vector<double>* phi = nullptr);

/// Tracks the latest value of every dimension from bus messages.
class EnvelopeMonitor {
public:
    EnvelopeMonitor(Envelope env, RiskModel model);

    /// Ignores messages that feed no dimension.
    std::optional<EStopDecision> on_message(const Message& msg);
    /// Sets the whole state vector at `t_ms`.
    std::optional<EStopDecision> update(const std::vector<double>& phi, std::int64_t t_ms);

    void reset();

    const Envelope& envelope() const { return env_; }
    const RiskModel& model() const { return model_; }
    const std::vector<double>& phi() const { return phi_; }
    const Exceedance& last_exceedance() const { return last_; }
    double last_risk() const { return last_risk_; }
    const AccumulatorState& state() const { return state_; }
    std::uint64_t out_of_envelope_count() const { return oe_count_; }
    const std::optional<EStopDecision>& last_decision() const { return decision_; }
    bool feeds_on(const std::string& topic) const;

    nlohmann::json risk_json() const;
    nlohmann::json save_state() const;
    void load_state(const nlohmann::json& j);

private:
    Envelope env_;
    RiskModel model_;
    std::vector<double> phi_;
    std::vector<bool> seen_;
    Exceedance last_;
    double last_risk_ = 0.0;
    std::optional<std::int64_t> last_t_;
    AccumulatorState state_;
    std::uint64_t oe_count_ = 0;
    std::optional<EStopDecision> decision_;
};

struct LabeledExcursion {
    std::vector<double> phi;
    double outcome = 0.0;  // severity in [0, 1]
};

struct SurfaceFit {
    double p = 2.0;
    std::vector<double> weights;
    double sse = 0.0;
    bool degenerate = false;  // no signal; defaults retained
};

/// Fits shape p in [1, 8] and non-negative per-dim weights by least squares.
/// Throws InsufficientData below 10 samples.
SurfaceFit learn_surface(const std::vector<LabeledExcursion>& samples, const Envelope& env, const RiskModel& defaults = {});

struct EnvelopeConfig {
    Envelope envelope;
    RiskModel model;
};

EnvelopeConfig parse_envelope_yaml(std::string_view text);
EnvelopeConfig load_envelope_file(const std::string& path);
nlohmann::json to_json(const Envelope& env);

}  // namespace roboguard
