#pragma once

// The `verify` command: runs instrumented training and turns every theoretical
// claim into a pass/fail check with measured quantities, written as a JSON
// report. Forces sgd + tanh (the first-order analysis needs the sgd update
// form and a smooth activation).

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "dprune/experiment.hpp"
#include "dprune/theory.hpp"

namespace dprune {

struct VerifyCheck {
    std::string name;
    bool pass = false;
    bool skipped = false;
    json details;
};

struct VerifyReport {
    std::vector<VerifyCheck> checks;
    std::vector<std::string> notices;
    bool all_pass = true;
    json config_echo;

    void add(VerifyCheck check) {
        if (!check.skipped) all_pass = all_pass && check.pass;
        checks.push_back(std::move(check));
    }
};

namespace verify_detail {

constexpr double kIdentityTol = 1e-10;
constexpr double kScalingLow = 3.5;
constexpr double kScalingHigh = 4.5;
constexpr double kBudgetFraction = 0.95;
constexpr std::size_t kSignSteps = 50;
constexpr double kScalingLearningRate = 0.02;
// The alpha-vs-alpha/2 comparison assumes near-matched trajectories; pooling
// stops before accumulated divergence contaminates the ratio.
constexpr std::size_t kScalingMaxSteps = 12;

struct DefinedProjection {
    long step;
    theory::ProjectionReport report;
};

inline std::vector<DefinedProjection> defined_projection_steps(const RunTrace& trace) {
    std::vector<DefinedProjection> out;
    for (long t = 1; t < static_cast<long>(trace.steps.size()); ++t) {
        auto report = theory::check_projection(trace, t);
        if (report.a_coefficient && report.b_coefficient) {
            out.push_back({t, std::move(report)});
        }
    }
    return out;
}

}  // namespace verify_detail

inline VerifyReport run_verify(ExperimentConfig cfg) {
    using namespace verify_detail;
    VerifyReport report;

    if (cfg.train.optimizer != Optimizer::sgd) {
        report.notices.push_back("verify forces the sgd optimizer (configured: adam)");
        cfg.train.optimizer = Optimizer::sgd;
    }
    if (cfg.model.activation != Activation::tanh) {
        report.notices.push_back("verify forces tanh activations (configured: relu)");
        cfg.model.activation = Activation::tanh;
    }
    if (cfg.train.selection_mode != SelectionMode::batch) {
        report.notices.push_back("verify forces batch selection (instrumentation granularity)");
        cfg.train.selection_mode = SelectionMode::batch;
    }
    report.config_echo = config_to_json(cfg);

    const ResolvedData data = resolve_datasets(cfg.dataset);
    const ModelSpec spec = make_spec(data.target, cfg.model);
    const bool pretraining = cfg.pretrain.enabled && data.source.has_value();
    const ParameterVector start =
        pretraining ? pretrain_source(*data.source, cfg, spec, cfg.train.seed)
                    : init_params(spec, init_stream_seed(cfg.train.seed));

    const bool frozen = cfg.train.learning_rate == 0.0;
    const bool degenerate_pace = cfg.train.beta >= 1.0;
    if (degenerate_pace) {
        report.notices.push_back(
            "beta = 1: reference tracks online exactly; history-dependent checks degenerate");
    }

    // --- standard instrumented run -----------------------------------------
    const auto standard = theory::run_instrumented(data.target, cfg.train, spec, start);
    const std::size_t steps = standard.trace.steps.size();

    {
        const auto identity = theory::check_identity(standard.trace);
        VerifyCheck check;
        check.name = "displacement_identity";
        check.pass = identity.max_delta_residual <= kIdentityTol &&
                     identity.max_gradient_residual <= kIdentityTol;
        check.details = {{"max_delta_residual", identity.max_delta_residual},
                         {"max_gradient_residual", identity.max_gradient_residual},
                         {"tolerance", kIdentityTol},
                         {"steps", steps}};
        report.add(std::move(check));
    }

    if (frozen) {
        // learning rate 0: every score and every residual must be exactly zero
        bool zeros = true;
        for (const auto& st : standard.trace.steps) {
            for (const auto& [id, score] : st.decision.scores) zeros &= score == 0.0;
        }
        const auto p1 = theory::check_first_order(standard.trace,
                                            static_cast<long>(standard.trace.steps.size()) - 1);
        zeros &= p1.mean_abs_residual == 0.0 && p1.max_abs_residual == 0.0;
        VerifyCheck check;
        check.name = "frozen_training_zero_scores";
        check.pass = zeros;
        check.details = {{"max_abs_residual", p1.max_abs_residual}};
        report.add(std::move(check));
        report.notices.push_back(
            "learning rate 0: scaling, sign, and budget checks are skipped (all quantities 0)");
    }

    // --- drift bound for the three reference betas ---------------------------
    for (double beta : {0.25, 0.5, 0.9}) {
        auto drift_cfg = cfg.train;
        drift_cfg.beta = beta;
        const auto run = theory::run_instrumented(data.target, drift_cfg, spec, start);
        const auto drift = theory::check_drift_bound(run.trace);
        char beta_label[16];
        std::snprintf(beta_label, sizeof(beta_label), "%g", beta);
        VerifyCheck check;
        check.name = std::string("drift_bound_beta_") + beta_label;
        check.pass = drift.geometric_bound_holds && drift.partial_sum_bound_holds;
        check.details = {{"beta", beta},
                         {"max_drift", drift.max_drift},
                         {"max_update_norm", drift.max_update_norm},
                         {"first_violation_step", drift.first_violation_step}};
        report.add(std::move(check));
    }
    if (degenerate_pace) {
        VerifyCheck check;
        check.name = "drift_bound_configured_beta";
        check.skipped = true;
        check.details = {{"beta", cfg.train.beta},
                         {"reason", "bound (1-beta)/beta is 0 at beta = 1; check degenerates"}};
        report.add(std::move(check));
    }

    // --- residual scaling (alpha vs alpha/2) ---------------------------------
    if (!frozen) {
        auto scale_cfg = cfg.train;
        scale_cfg.pruning_ratio = 0.0;  // identical selections keep trajectories matched
        scale_cfg.beta = 0.5;           // the check measures alpha dependence; beta = 1
                                        // would zero every discrepancy
        scale_cfg.learning_rate = kScalingLearningRate;
        scale_cfg.epochs = 1;
        auto half_cfg = scale_cfg;
        half_cfg.learning_rate = scale_cfg.learning_rate / 2.0;

        const auto full = theory::run_instrumented(data.target, scale_cfg, spec, start);
        const auto half = theory::run_instrumented(data.target, half_cfg, spec, start);
        double sum_full = 0.0, sum_half = 0.0;
        std::size_t n_full = 0, n_half = 0;
        const std::size_t last = std::min(full.trace.steps.size(), kScalingMaxSteps + 1);
        for (std::size_t t = 1; t < last; ++t) {
            const auto r1 = theory::check_first_order(full.trace, static_cast<long>(t));
            const auto r2 = theory::check_first_order(half.trace, static_cast<long>(t));
            sum_full += r1.mean_abs_residual * static_cast<double>(r1.records.size());
            n_full += r1.records.size();
            sum_half += r2.mean_abs_residual * static_cast<double>(r2.records.size());
            n_half += r2.records.size();
        }
        const double ratio =
            (sum_full / static_cast<double>(n_full)) / (sum_half / static_cast<double>(n_half));
        VerifyCheck check;
        check.name = "residual_scaling";
        check.pass = ratio >= kScalingLow && ratio <= kScalingHigh;
        check.details = {{"ratio", ratio},
                         {"bounds", std::vector<double>{kScalingLow, kScalingHigh}},
                         {"alpha", scale_cfg.learning_rate},
                         {"steps_compared", last - 1}};
        report.add(std::move(check));
    }

    // --- projection coefficients: exact signs under first-order selection ----
    if (!frozen && !degenerate_pace) {
        auto fo_cfg = cfg.train;
        const auto run = theory::run_instrumented(data.target, fo_cfg, spec, start, true);
        const auto defined = defined_projection_steps(run.trace);
        VerifyCheck check;
        check.name = "projection_signs_first_order";
        if (defined.size() < kSignSteps) {
            check.skipped = true;
            check.details = {{"defined_steps", defined.size()},
                             {"required", kSignSteps},
                             {"reason", "not enough steps with both coefficient groups"}};
            report.notices.push_back("projection sign check skipped: too few defined steps");
        } else {
            std::size_t violations = 0;
            for (std::size_t i = 0; i < kSignSteps; ++i) {
                const auto& r = defined[i].report;
                if (*r.a_coefficient < -1e-12 || *r.b_coefficient > 1e-12) ++violations;
            }
            check.pass = violations == 0;
            check.details = {{"checked_steps", kSignSteps}, {"violations", violations}};
        }
        report.add(std::move(check));

        // perpendicular coefficients: expectation-zero sign test
        std::size_t c_pos = 0, c_total = 0, d_pos = 0, d_total = 0;
        for (const auto& entry : defined) {
            if (entry.report.c_coefficient) {
                ++c_total;
                c_pos += *entry.report.c_coefficient > 0.0;
            }
            if (entry.report.d_coefficient) {
                ++d_total;
                d_pos += *entry.report.d_coefficient > 0.0;
            }
        }
        VerifyCheck sign_check;
        sign_check.name = "projection_perpendicular_sign_test";
        if (c_total < kSignSteps || d_total < kSignSteps) {
            sign_check.skipped = true;
            sign_check.details = {{"c_steps", c_total}, {"d_steps", d_total}};
        } else {
            const double c_frac = static_cast<double>(c_pos) / static_cast<double>(c_total);
            const double d_frac = static_cast<double>(d_pos) / static_cast<double>(d_total);
            sign_check.pass = c_frac >= 0.2 && c_frac <= 0.8 && d_frac >= 0.2 && d_frac <= 0.8;
            sign_check.details = {{"c_positive_fraction", c_frac},
                                  {"d_positive_fraction", d_frac},
                                  {"bounds", std::vector<double>{0.2, 0.8}}};
        }
        report.add(std::move(sign_check));
    }

    // --- projection coefficients: residual budget under true selection -------
    if (!frozen && !degenerate_pace) {
        const auto defined = defined_projection_steps(standard.trace);
        VerifyCheck check;
        check.name = "projection_residual_budget";
        if (defined.empty()) {
            check.skipped = true;
            check.details = {{"defined_steps", 0}};
            report.notices.push_back("projection budget check skipped: no defined steps");
        } else {
            std::size_t within = 0;
            for (const auto& entry : defined) {
                const auto p1 = theory::check_first_order(standard.trace, entry.step);
                const double tau = theory::residual_budget(p1, entry.report.v_ema_norm);
                if (*entry.report.a_coefficient >= -tau && *entry.report.b_coefficient <= tau) {
                    ++within;
                }
            }
            const double fraction =
                static_cast<double>(within) / static_cast<double>(defined.size());
            check.pass = fraction >= kBudgetFraction;
            check.details = {{"defined_steps", defined.size()},
                             {"within_budget", within},
                             {"fraction", fraction},
                             {"required_fraction", kBudgetFraction}};
        }
        report.add(std::move(check));
    }

    // --- Cauchy-Schwarz / gradient-norm lower bound ---------------------------
    {
        std::size_t cs_violations = 0, bound_violations = 0, checked = 0;
        for (long t = 0; t < static_cast<long>(steps); ++t) {
            const auto g = theory::check_grand_bound(standard.trace, t);
            cs_violations += g.cauchy_schwarz_violations;
            bound_violations += g.lower_bound_violations;
            checked += g.checked;
        }
        VerifyCheck cs;
        cs.name = "cauchy_schwarz";
        cs.pass = cs_violations == 0;
        cs.details = {{"checked_samples", checked}, {"violations", cs_violations}};
        report.add(std::move(cs));

        VerifyCheck lb;
        lb.name = "grand_lower_bound";
        lb.pass = bound_violations == 0;
        lb.details = {{"checked_samples", checked}, {"violations", bound_violations}};
        report.add(std::move(lb));
    }

    return report;
}

inline json verify_report_to_json(const VerifyReport& report) {
    json checks = json::array();
    for (const VerifyCheck& c : report.checks) {
        checks.push_back({{"name", c.name},
                          {"pass", c.pass},
                          {"skipped", c.skipped},
                          {"details", c.details}});
    }
    return json{{"pass", report.all_pass},
                {"notices", report.notices},
                {"checks", checks},
                {"config", report.config_echo}};
}

inline VerifyReport cmd_verify(const ExperimentConfig& cfg) {
    VerifyReport report = run_verify(cfg);
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    atomic_write_file(dir / "theory_report.json", verify_report_to_json(report).dump(2) + "\n");
    return report;
}

}  // namespace dprune
