#pragma once

// Numerical checks of the framework's theoretical claims on instrumented
// training runs: the EMA displacement identity, the drift bound, the
// first-order (Taylor) interpretation of the loss-discrepancy score, the
// gradient-projection coefficients, and the Cauchy-Schwarz connection to
// gradient-norm scoring.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dprune/error.hpp"
#include "dprune/model.hpp"
#include "dprune/pruning.hpp"
#include "dprune/trainer.hpp"

namespace dprune {
namespace theory {

// Central-difference gradient estimate, one coordinate at a time. Independent
// oracle for every gradient-based check.
inline ParameterVector finite_difference_oracle(const ParameterVector& params,
                                                const Sample& sample, const ModelSpec& spec,
                                                double step_size) {
    if (!(step_size > 0.0)) {
        throw PreconditionError("finite_difference_oracle: step_size must be positive");
    }
    ParameterVector grad(params.size(), 0.0);
    ParameterVector probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + step_size;
        const double plus = forward_loss(probe, sample, spec);
        probe[i] = params[i] - step_size;
        const double minus = forward_loss(probe, sample, spec);
        probe[i] = params[i];
        grad[i] = (plus - minus) / (2.0 * step_size);
    }
    return grad;
}

// |a - b| relative to max(|a|, |b|, floor); the floor turns the comparison
// into an absolute tolerance where both values are tiny.
inline double relative_error(double a, double b, double floor_scale = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_scale});
}

// ---------------------------------------------------------------------------
// Shared trace arithmetic
// ---------------------------------------------------------------------------

namespace detail {

inline const StepTrace& step_at(const RunTrace& trace, long step) {
    if (step < 0 || static_cast<std::size_t>(step) >= trace.steps.size()) {
        throw PreconditionError("trace has no step " + std::to_string(step));
    }
    const StepTrace& st = trace.steps[static_cast<std::size_t>(step)];
    if (st.step != step) throw PreconditionError("trace steps are not contiguous from 0");
    return st;
}

inline void require_sgd(const RunTrace& trace, const char* what) {
    if (trace.config.optimizer != Optimizer::sgd) {
        throw PreconditionError(std::string(what) + ": requires an sgd-trained run");
    }
}

// -sum_{j=1..t} (1-beta)^j * delta_theta_{t-j}, from measured updates.
inline ParameterVector displacement_from_deltas(const RunTrace& trace, long step) {
    const std::size_t n = trace.steps.front().theta.size();
    ParameterVector acc(n, 0.0);
    const double decay = 1.0 - trace.config.beta;
    for (long j = 1; j <= step; ++j) {
        const double w = std::pow(decay, static_cast<double>(j));
        const ParameterVector& dt = step_at(trace, step - j).delta_theta;
        for (std::size_t i = 0; i < n; ++i) acc[i] -= w * dt[i];
    }
    return acc;
}

// alpha * sum_{j=1..t} (1-beta)^j * grad(D_hat_{t-j}, theta_{t-j}), untruncated.
inline ParameterVector displacement_from_gradients(const RunTrace& trace, long step) {
    const std::size_t n = trace.steps.front().theta.size();
    ParameterVector acc(n, 0.0);
    const double decay = 1.0 - trace.config.beta;
    for (long j = 1; j <= step; ++j) {
        const double w = std::pow(decay, static_cast<double>(j));
        const ParameterVector& g = step_at(trace, step - j).selected_avg_gradient;
        for (std::size_t i = 0; i < n; ++i) acc[i] += w * g[i];
    }
    const double alpha = trace.config.learning_rate;
    for (double& v : acc) v *= alpha;
    return acc;
}

inline ParameterVector xi_minus_theta(const StepTrace& st) {
    ParameterVector d(st.theta.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = st.xi[i] - st.theta[i];
    return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loss discrepancy as a first-order dot product
// ---------------------------------------------------------------------------

struct FirstOrderSampleRecord {
    std::int64_t sample_id = 0;
    double loss_discrepancy = 0.0;        // signed: L(x, xi) - L(x, theta)
    double first_order_dot = 0.0;         // grad . (xi - theta)
    double first_order_alpha_ema = 0.0;   // alpha * (grad . v_ema), equal under sgd
    double residual = 0.0;                // loss_discrepancy - first_order_dot
};

struct FirstOrderReport {
    long step = 0;
    std::vector<FirstOrderSampleRecord> records;
    double mean_abs_residual = 0.0;
    double max_abs_residual = 0.0;
    double epsilon_proxy = 0.0;               // max observed ||delta theta|| up to this step
    double identity_delta_residual = 0.0;     // ||(xi-theta) + sum (1-b)^j dtheta_{t-j}||
    double identity_gradient_residual = 0.0;  // ||(xi-theta) - alpha sum (1-b)^j grad_{t-j}||
};

inline FirstOrderReport check_first_order(const RunTrace& trace, long step) {
    detail::require_sgd(trace, "check_first_order");
    const StepTrace& st = detail::step_at(trace, step);

    FirstOrderReport report;
    report.step = step;

    const ParameterVector displacement = detail::xi_minus_theta(st);
    {
        const ParameterVector from_deltas = detail::displacement_from_deltas(trace, step);
        const ParameterVector from_grads = detail::displacement_from_gradients(trace, step);
        ParameterVector r1(displacement.size()), r2(displacement.size());
        for (std::size_t i = 0; i < displacement.size(); ++i) {
            r1[i] = displacement[i] - from_deltas[i];
            r2[i] = displacement[i] - from_grads[i];
        }
        report.identity_delta_residual = norm2(r1);
        report.identity_gradient_residual = norm2(r2);
    }

    for (long j = 0; j <= step; ++j) {
        report.epsilon_proxy =
            std::max(report.epsilon_proxy, norm2(detail::step_at(trace, j).delta_theta));
    }

    double abs_sum = 0.0;
    for (std::size_t k = 0; k < st.batch_ids.size(); ++k) {
        FirstOrderSampleRecord rec;
        rec.sample_id = st.batch_ids[k];
        rec.loss_discrepancy = st.loss_reference[k] - st.loss_online[k];
        rec.first_order_dot = dot(st.sample_gradients[k], displacement);
        rec.first_order_alpha_ema = st.alpha * dot(st.sample_gradients[k], st.v_ema);
        rec.residual = rec.loss_discrepancy - rec.first_order_dot;
        abs_sum += std::abs(rec.residual);
        report.max_abs_residual = std::max(report.max_abs_residual, std::abs(rec.residual));
        report.records.push_back(rec);
    }
    report.mean_abs_residual =
        st.batch_ids.empty() ? 0.0 : abs_sum / static_cast<double>(st.batch_ids.size());
    return report;
}

// Residual budget for the projection-coefficient signs under true-score
// selection: tau = 2 * max_abs_residual / ||v_ema||.
inline double residual_budget(const FirstOrderReport& first_order, double v_ema_norm) {
    if (v_ema_norm <= 0.0) return 0.0;
    return 2.0 * first_order.max_abs_residual / v_ema_norm;
}

// ---------------------------------------------------------------------------
// Gradient projection coefficients
// ---------------------------------------------------------------------------

struct ProjectionReport {
    long step = 0;
    std::optional<double> a_coefficient;  // plus-set projection onto unit v_ema
    std::optional<double> b_coefficient;  // minus-set projection onto unit v_ema
    std::optional<double> c_coefficient;  // plus-set projection onto a fixed perpendicular
    std::optional<double> d_coefficient;  // minus-set projection onto the same perpendicular
    std::size_t d_plus_size = 0;
    std::size_t d_hat_plus_size = 0;
    std::size_t d_minus_size = 0;
    std::size_t d_hat_minus_size = 0;
    double v_ema_norm = 0.0;
};

namespace detail {

inline ParameterVector mean_of(const std::vector<const ParameterVector*>& vs) {
    ParameterVector m(vs.front()->size(), 0.0);
    for (const ParameterVector* v : vs) {
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += (*v)[i];
    }
    const double inv = 1.0 / static_cast<double>(vs.size());
    for (double& x : m) x *= inv;
    return m;
}

// Fixed reference direction orthogonalized against v; gives a deterministic
// scalar coordinate in the perpendicular subspace.
inline std::optional<ParameterVector> perpendicular_direction(const ParameterVector& v_unit,
                                                              std::size_t n) {
    Rng rng(0x9E2DULL);
    ParameterVector w(n);
    for (double& x : w) x = rng.normal();
    const double along = dot(w, v_unit);
    for (std::size_t i = 0; i < n; ++i) w[i] -= along * v_unit[i];
    const double norm = norm2(w);
    if (norm < 1e-12) return std::nullopt;
    for (double& x : w) x /= norm;
    return w;
}

}  // namespace detail

inline ProjectionReport check_projection(const RunTrace& trace, long step) {
    detail::require_sgd(trace, "check_projection");
    const StepTrace& st = detail::step_at(trace, step);

    ProjectionReport report;
    report.step = step;
    report.v_ema_norm = norm2(st.v_ema);

    std::vector<const ParameterVector*> plus, hat_plus, minus, hat_minus;
    for (std::size_t k = 0; k < st.batch_ids.size(); ++k) {
        const double d = dot(st.sample_gradients[k], st.v_ema);
        const bool selected = st.decision.selected_ids.count(st.batch_ids[k]) > 0;
        if (d > 0.0) {
            plus.push_back(&st.sample_gradients[k]);
            if (selected) hat_plus.push_back(&st.sample_gradients[k]);
        } else if (d < 0.0) {
            minus.push_back(&st.sample_gradients[k]);
            if (selected) hat_minus.push_back(&st.sample_gradients[k]);
        }
    }
    report.d_plus_size = plus.size();
    report.d_hat_plus_size = hat_plus.size();
    report.d_minus_size = minus.size();
    report.d_hat_minus_size = hat_minus.size();

    if (report.v_ema_norm <= 0.0) return report;  // step 0: no history, nothing to project on

    ParameterVector v_unit = st.v_ema;
    for (double& x : v_unit) x /= report.v_ema_norm;
    const auto perp = detail::perpendicular_direction(v_unit, v_unit.size());

    if (!plus.empty() && !hat_plus.empty()) {
        const ParameterVector mean_full = detail::mean_of(plus);
        const ParameterVector mean_sel = detail::mean_of(hat_plus);
        ParameterVector diff(mean_full.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = mean_sel[i] - mean_full[i];
        report.a_coefficient = dot(diff, v_unit);
        if (perp) report.c_coefficient = dot(diff, *perp);
    }
    if (!minus.empty() && !hat_minus.empty()) {
        const ParameterVector mean_full = detail::mean_of(minus);
        const ParameterVector mean_sel = detail::mean_of(hat_minus);
        ParameterVector diff(mean_full.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = mean_sel[i] - mean_full[i];
        report.b_coefficient = dot(diff, v_unit);
        if (perp) report.d_coefficient = dot(diff, *perp);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Cauchy-Schwarz / gradient-norm lower bound
// ---------------------------------------------------------------------------

struct GrandBoundReport {
    struct SampleBound {
        std::int64_t sample_id = 0;
        double implied_lower_bound = 0.0;  // (score - |residual|) / ||xi - theta||
        double gradient_norm = 0.0;
    };
    long step = 0;
    std::size_t checked = 0;
    std::size_t cauchy_schwarz_violations = 0;
    std::size_t lower_bound_violations = 0;
    double displacement_norm = 0.0;
    double min_bound_slack = 0.0;  // min over samples of (grad norm - implied bound)
    std::vector<SampleBound> bounds;  // selected samples only
};

inline GrandBoundReport check_grand_bound(const RunTrace& trace, long step) {
    const StepTrace& st = detail::step_at(trace, step);
    const ParameterVector displacement = detail::xi_minus_theta(st);
    const double disp_norm = norm2(displacement);

    GrandBoundReport report;
    report.step = step;
    report.displacement_norm = disp_norm;
    report.min_bound_slack = std::numeric_limits<double>::infinity();

    for (std::size_t k = 0; k < st.batch_ids.size(); ++k) {
        if (!st.decision.selected_ids.count(st.batch_ids[k])) continue;
        ++report.checked;
        const double g_norm = norm2(st.sample_gradients[k]);
        const double first_order = dot(st.sample_gradients[k], displacement);
        if (std::abs(first_order) > g_norm * disp_norm * (1.0 + 1e-12)) {
            ++report.cauchy_schwarz_violations;
        }
        const double score = std::abs(st.loss_reference[k] - st.loss_online[k]);
        const double residual = (st.loss_reference[k] - st.loss_online[k]) - first_order;
        const double bound =
            disp_norm > 0.0 ? (score - std::abs(residual)) / disp_norm : 0.0;
        if (bound > g_norm * (1.0 + 1e-12) + 1e-15) ++report.lower_bound_violations;
        report.min_bound_slack = std::min(report.min_bound_slack, g_norm - bound);
        report.bounds.push_back({st.batch_ids[k], bound, g_norm});
    }
    if (report.checked == 0) report.min_bound_slack = 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Drift bound and the displacement identity, run-wide
// ---------------------------------------------------------------------------

struct DriftReport {
    bool geometric_bound_holds = true;  // ||xi-theta|| <= ((1-b)/b) max ||dtheta||
    bool partial_sum_bound_holds = true;  // ||xi-theta|| <= sum (1-b)^j max ||dtheta||
    double max_drift = 0.0;
    double max_update_norm = 0.0;
    long first_violation_step = -1;
};

inline DriftReport check_drift_bound(const RunTrace& trace) {
    detail::require_sgd(trace, "check_drift_bound");
    const double beta = trace.config.beta;
    if (beta <= 0.0) throw PreconditionError("check_drift_bound: beta must be positive");

    DriftReport report;
    double running_max_update = 0.0;
    const double decay = 1.0 - beta;
    // The EMA mix beta*theta + (1-beta)*xi leaves rounding residue even when
    // xi == theta, so the inequality gets an absolute epsilon besides the
    // relative cushion. Both are far below any meaningful violation scale.
    const double cushion = 1.0 + 1e-12;
    const double slack = 1e-12;
    for (const StepTrace& st : trace.steps) {
        const double drift = norm2(detail::xi_minus_theta(st));
        report.max_drift = std::max(report.max_drift, drift);
        // partial sum_{j=1..t} (1-b)^j == (1-b)(1-(1-b)^t)/b
        const double partial =
            decay * (1.0 - std::pow(decay, static_cast<double>(st.step))) / beta;
        const double geometric = decay / beta;
        if (drift > partial * running_max_update * cushion + slack) {
            report.partial_sum_bound_holds = false;
            if (report.first_violation_step < 0) report.first_violation_step = st.step;
        }
        if (drift > geometric * running_max_update * cushion + slack) {
            report.geometric_bound_holds = false;
            if (report.first_violation_step < 0) report.first_violation_step = st.step;
        }
        running_max_update = std::max(running_max_update, norm2(st.delta_theta));
    }
    report.max_update_norm = running_max_update;
    return report;
}

struct IdentityReport {
    double max_delta_residual = 0.0;     // worst ||(xi-theta) + sum (1-b)^j dtheta|| over steps
    double max_gradient_residual = 0.0;  // worst ||(xi-theta) - alpha sum (1-b)^j grad||
};

inline IdentityReport check_identity(const RunTrace& trace) {
    detail::require_sgd(trace, "check_identity");
    IdentityReport report;
    for (const StepTrace& st : trace.steps) {
        const ParameterVector displacement = detail::xi_minus_theta(st);
        const ParameterVector from_deltas = detail::displacement_from_deltas(trace, st.step);
        const ParameterVector from_grads = detail::displacement_from_gradients(trace, st.step);
        double r1 = 0.0, r2 = 0.0;
        for (std::size_t i = 0; i < displacement.size(); ++i) {
            const double e1 = displacement[i] - from_deltas[i];
            const double e2 = displacement[i] - from_grads[i];
            r1 += e1 * e1;
            r2 += e2 * e2;
        }
        report.max_delta_residual = std::max(report.max_delta_residual, std::sqrt(r1));
        report.max_gradient_residual = std::max(report.max_gradient_residual, std::sqrt(r2));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Instrumented runner
// ---------------------------------------------------------------------------

// Score override ranking samples by |grad . v_ema|: the first-order form of
// the loss-discrepancy score (the alpha factor does not change ranks).
inline ScoreOverrideFn first_order_score(const ModelSpec& spec) {
    return [spec](const Sample& sample, const ModelPair& pair, const ParameterVector& v_ema) {
        if (v_ema.empty()) return 0.0;
        const ParameterVector g = per_sample_gradient(pair.online, sample, spec);
        return std::abs(dot(g, v_ema));
    };
}

struct InstrumentedRun {
    RunTrace trace;
    TrainResult result;
};

inline InstrumentedRun run_instrumented(const Dataset& dataset, const TrainConfig& config,
                                        const ModelSpec& spec, const ParameterVector& init,
                                        bool first_order_selection = false) {
    InstrumentedRun run;
    TrainHooks hooks;
    if (first_order_selection) hooks.score_override = first_order_score(spec);
    run.result = train(dataset, config, spec, init, &hooks, &run.trace);
    return run;
}

}  // namespace theory
}  // namespace dprune
