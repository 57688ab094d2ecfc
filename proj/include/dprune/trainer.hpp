#pragma once

// Dynamic-pruning training loop: per-batch (default) or per-epoch selection,
// sgd/adam optimizers, EMA reference updates, EMA-gradient bookkeeping, and
// per-epoch metric records.
//
// Runtime accounting is deterministic by design: the trainer counts model
// evaluations (forward passes and per-sample backward passes) and converts
// them to seconds at a fixed rate. This keeps every output file bit-stable
// across runs while still reflecting the real cost drivers, e.g. the extra
// reference-model forward passes of loss-discrepancy scoring.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dprune/dataset.hpp"
#include "dprune/error.hpp"
#include "dprune/metrics.hpp"
#include "dprune/model.hpp"
#include "dprune/optimizer.hpp"
#include "dprune/pruning.hpp"
#include "dprune/rng.hpp"

namespace dprune {

enum class Optimizer { sgd, adam };
enum class SelectionMode { batch, epoch };

inline const char* optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }
inline const char* selection_mode_name(SelectionMode m) {
    return m == SelectionMode::batch ? "batch" : "epoch";
}

inline Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw PreconditionError("unknown optimizer '" + s + "'");
}

inline SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "batch") return SelectionMode::batch;
    if (s == "epoch") return SelectionMode::epoch;
    throw PreconditionError("unknown selection mode '" + s + "'");
}

struct TrainConfig {
    double pruning_ratio = 0.0;  // fraction removed; keep_fraction = 1 - pruning_ratio
    double beta = 0.5;
    double learning_rate = 0.1;
    int epochs = 1;
    int batch_size = 32;
    ScorerKind scorer = ScorerKind::molpeg;
    Optimizer optimizer = Optimizer::sgd;
    SelectionMode selection_mode = SelectionMode::batch;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double history_truncation_tol = 1e-9;

    void validate() const {
        if (pruning_ratio < 0.0 || pruning_ratio >= 1.0) {
            throw PreconditionError("TrainConfig: pruning_ratio must be in [0, 1)");
        }
        if (beta < 0.0 || beta > 1.0) {
            throw PreconditionError("TrainConfig: beta must be in [0, 1]");
        }
        // learning_rate 0 is admitted as frozen training (used by the verify
        // degenerate checks); sgd_step itself still demands a positive alpha.
        if (learning_rate < 0.0) {
            throw PreconditionError("TrainConfig: learning_rate must be non-negative");
        }
        if (epochs <= 0) throw PreconditionError("TrainConfig: epochs must be positive");
        if (batch_size <= 0) throw PreconditionError("TrainConfig: batch_size must be positive");
    }
};

struct DeltaStats {
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;   // mean loss of selected samples at their update step
    double val_metric = 0.0;   // accuracy (classification) or mae (regression)
    double test_metric = 0.0;
    std::int64_t selected_count = 0;
    double wall_time_seconds = 0.0;
    DeltaStats delta_stats;
};

// ---------------------------------------------------------------------------
// Deterministic work accounting
// ---------------------------------------------------------------------------

namespace work {

constexpr double kSecondsPerUnit = 1e-6;
constexpr std::uint64_t kForward = 1;
constexpr std::uint64_t kBackward = 3;  // per-sample gradient incl. its forward pass

inline std::uint64_t scoring_cost(ScorerKind k) {
    switch (k) {
        case ScorerKind::molpeg: return 2 * kForward;  // online + reference pass
        case ScorerKind::soft_random: return 0;
        case ScorerKind::grand: return kBackward;
        case ScorerKind::loss_magnitude:
        case ScorerKind::el2n:
        case ScorerKind::entropy:
        case ScorerKind::least_confidence:
        case ScorerKind::forgetting: return kForward;
    }
    return kForward;
}

}  // namespace work

struct WorkClock {
    std::uint64_t units = 0;
    void add(std::uint64_t n) { units += n; }
    double seconds() const { return static_cast<double>(units) * work::kSecondsPerUnit; }
};

// 1000 / runtime: the higher, the faster.
inline double time_efficiency(double runtime_seconds) {
    if (!(runtime_seconds > 0.0)) {
        throw PreconditionError("time_efficiency: runtime must be positive");
    }
    return 1000.0 / runtime_seconds;
}

// ---------------------------------------------------------------------------
// Instrumentation and hooks
// ---------------------------------------------------------------------------

// One selection + update step, recorded at scoring time; delta_theta is filled
// in after the online update.
struct StepTrace {
    long step = 0;
    int epoch = 0;
    ParameterVector theta;  // online params the step scored with
    ParameterVector xi;     // reference params the step scored with
    std::vector<std::int64_t> batch_ids;
    std::vector<double> loss_online;                // aligned with batch_ids
    std::vector<double> loss_reference;             // aligned with batch_ids
    std::vector<ParameterVector> sample_gradients;  // grad of loss at theta, per batch sample
    PruneDecision decision;
    ParameterVector selected_avg_gradient;  // gradient the online update consumed
    ParameterVector v_ema;                  // EMA gradient at this step
    ParameterVector delta_theta;            // online after - online before
    double alpha = 0.0;
};

struct RunTrace {
    ModelSpec spec;
    TrainConfig config;
    std::vector<StepTrace> steps;
};

using ScoreOverrideFn =
    std::function<double(const Sample&, const ModelPair&, const ParameterVector& v_ema)>;

struct TrainHooks {
    // Called for every PruneDecision with the size of the candidate pool.
    std::function<void(const PruneDecision&, std::size_t pool_size, int epoch, long step)>
        on_decision;
    // Replaces the configured scorer when set (used by the theory harness to
    // select on first-order dot-product scores).
    ScoreOverrideFn score_override;
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
    ParameterVector final_online;
    ParameterVector final_reference;
    std::vector<double> final_scores;  // persistent score table, indexed by sample id
    double total_train_seconds = 0.0;  // sum of per-epoch wall_time_seconds
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

inline std::uint64_t epoch_shuffle_seed(std::uint64_t seed, int epoch) {
    return derive_seed(derive_seed(seed, 0x53485546ULL), static_cast<std::uint64_t>(epoch));
}

// The trainer's per-epoch shuffle, exposed so tests can replay trajectories.
inline std::vector<std::int64_t> epoch_shuffle(std::vector<std::int64_t> ids, std::uint64_t seed,
                                               int epoch) {
    Rng rng(epoch_shuffle_seed(seed, epoch));
    rng.shuffle(ids);
    return ids;
}

inline std::uint64_t score_stream_seed(std::uint64_t seed) {
    return derive_seed(seed, 0x53434F52ULL);
}

// Accuracy for classification, MAE for regression, over one split.
inline double evaluate_split(const ParameterVector& params, const Dataset& dataset, Split split,
                             const ModelSpec& spec, WorkClock* clock = nullptr) {
    const auto ids = dataset.ids_of(split);
    if (ids.empty()) throw PreconditionError("evaluate_split: split is empty");
    if (clock) clock->add(ids.size() * work::kForward);
    if (spec.task == Task::classification) {
        std::vector<int> predicted, actual;
        predicted.reserve(ids.size());
        actual.reserve(ids.size());
        for (std::int64_t id : ids) {
            predicted.push_back(predict_class(params, dataset.samples[id], spec));
            actual.push_back(dataset.samples[id].label());
        }
        return accuracy(predicted, actual);
    }
    std::vector<double> pred, targ;
    pred.reserve(ids.size());
    targ.reserve(ids.size());
    for (std::int64_t id : ids) {
        pred.push_back(forward_output(params, dataset.samples[id], spec)[0]);
        targ.push_back(dataset.samples[id].target);
    }
    return mae(pred, targ);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

struct OptimizerDriver {
    Optimizer kind;
    double learning_rate;
    AdamConfig adam_config;
    AdamState adam_state;

    OptimizerDriver(const TrainConfig& cfg, std::size_t param_count)
        : kind(cfg.optimizer),
          learning_rate(cfg.learning_rate),
          adam_config{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps},
          adam_state(AdamState::init(param_count)) {}

    void step(ParameterVector& params, const ParameterVector& gradient) {
        if (kind == Optimizer::sgd) {
            if (learning_rate > 0.0) params = sgd_step(params, gradient, learning_rate);
        } else {
            adam_step(adam_state, params, gradient, adam_config);
        }
    }
};

}  // namespace detail

inline TrainResult train(const Dataset& dataset, const TrainConfig& config, const ModelSpec& spec,
                         const ParameterVector& init, const TrainHooks* hooks = nullptr,
                         RunTrace* trace = nullptr) {
    config.validate();
    spec.validate();
    if (init.size() != spec.param_count()) {
        throw DimensionError("train: init length " + std::to_string(init.size()) +
                             " does not match spec layout " + std::to_string(spec.param_count()));
    }
    if (dataset.split.empty()) throw PreconditionError("train: dataset has no split assignment");
    if (trace && config.selection_mode != SelectionMode::batch) {
        throw PreconditionError("train: instrumentation requires batch selection mode");
    }

    const std::vector<std::int64_t> train_ids = dataset.ids_of(Split::train);
    if (train_ids.empty()) throw PreconditionError("train: train split is empty");

    // Persistent score table; every score starts at 1.
    std::vector<double> scores_table(dataset.size(), 1.0);
    for (const Sample& s : dataset.samples) scores_table[s.id] = s.score;

    ModelPair pair = ModelPair::init(init, config.beta);
    GradientHistory history;
    history.beta = config.beta;
    history.truncation_tol = config.history_truncation_tol;

    detail::OptimizerDriver optimizer(config, init.size());
    Rng score_rng(score_stream_seed(config.seed));
    ForgettingState forgetting;

    const double keep_fraction = 1.0 - config.pruning_ratio;
    const bool wants_instrumentation = trace != nullptr;
    if (trace) {
        trace->spec = spec;
        trace->config = config;
        trace->steps.clear();
    }

    TrainResult result;
    WorkClock clock;

    const auto score_sample = [&](const Sample& sample,
                                  const ParameterVector& v_ema) -> double {
        if (hooks && hooks->score_override) {
            return hooks->score_override(sample, pair, v_ema);
        }
        clock.add(work::scoring_cost(config.scorer));
        return score_baseline(config.scorer, sample, pair, spec, &score_rng, &forgetting);
    };

    // Runs one gradient update over `chosen` (ids in batch order), advancing the
    // model pair, the optimizer, and the gradient history.
    const auto apply_update = [&](const std::vector<std::int64_t>& chosen, double* mean_loss_out,
                                  StepTrace* st) {
        std::vector<const Sample*> batch_view;
        batch_view.reserve(chosen.size());
        for (std::int64_t id : chosen) batch_view.push_back(&dataset.samples[id]);
        clock.add(chosen.size() * work::kBackward);
        double mean_loss = 0.0;
        const ParameterVector grad = batch_gradient(pair.online, batch_view, spec, &mean_loss);
        if (mean_loss_out) *mean_loss_out = mean_loss;

        const ParameterVector theta_before = wants_instrumentation ? pair.online : ParameterVector{};
        optimizer.step(pair.online, grad);
        if (!all_finite(pair.online)) {
            throw NumericError("non-finite parameters after the update");
        }
        pair = ema_update(std::move(pair));
        history = accumulate_ema_gradient(std::move(history), grad, pair.step);
        if (st) {
            st->selected_avg_gradient = grad;
            st->delta_theta.resize(pair.online.size());
            for (std::size_t i = 0; i < pair.online.size(); ++i) {
                st->delta_theta[i] = pair.online[i] - theta_before[i];
            }
        }
        pair.step += 1;
    };

    // Adds epoch/step context to numerical aborts.
    const auto guarded = [&](int epoch, const auto& body) {
        try {
            body();
        } catch (const NumericError& e) {
            throw NumericError("train aborted at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(pair.step) + ": " + e.what());
        }
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const std::uint64_t epoch_start_units = clock.units;
        double loss_sum = 0.0;
        std::int64_t selected_total = 0;
        std::vector<double> deltas;

        if (config.selection_mode == SelectionMode::batch) {
            const auto order = epoch_shuffle(train_ids, config.seed, epoch);
            for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
                const std::size_t end = std::min(order.size(),
                                                 begin + static_cast<std::size_t>(config.batch_size));
                const std::vector<std::int64_t> batch_ids(order.begin() + begin,
                                                          order.begin() + end);
                guarded(epoch, [&] {
                    ParameterVector v_ema;
                    const bool needs_v_ema =
                        wants_instrumentation || (hooks && hooks->score_override);
                    if (needs_v_ema) v_ema = ema_gradient(history, pair.step, init.size());

                    std::map<std::int64_t, double> batch_scores;
                    for (std::int64_t id : batch_ids) {
                        batch_scores[id] = score_sample(dataset.samples[id], v_ema);
                    }
                    const PruneDecision decision =
                        select_topk(batch_scores, batch_ids, keep_fraction);
                    if (hooks && hooks->on_decision) {
                        hooks->on_decision(decision, batch_ids.size(), epoch, pair.step);
                    }
                    for (const auto& [id, s] : batch_scores) scores_table[id] = s;

                    std::vector<std::int64_t> chosen;
                    chosen.reserve(decision.selected_ids.size());
                    for (std::int64_t id : batch_ids) {
                        if (decision.selected_ids.count(id)) chosen.push_back(id);
                    }

                    StepTrace st;
                    StepTrace* stp = nullptr;
                    if (wants_instrumentation) {
                        st.step = pair.step;
                        st.epoch = epoch;
                        st.theta = pair.online;
                        st.xi = pair.reference;
                        st.batch_ids = batch_ids;
                        st.decision = decision;
                        st.v_ema = v_ema;
                        st.alpha = config.learning_rate;
                        st.loss_online.reserve(batch_ids.size());
                        st.loss_reference.reserve(batch_ids.size());
                        st.sample_gradients.reserve(batch_ids.size());
                        for (std::int64_t id : batch_ids) {
                            const Sample& s = dataset.samples[id];
                            st.loss_online.push_back(forward_loss(pair.online, s, spec));
                            st.loss_reference.push_back(forward_loss(pair.reference, s, spec));
                            st.sample_gradients.push_back(
                                per_sample_gradient(pair.online, s, spec));
                        }
                        stp = &st;
                    }

                    double mean_loss = 0.0;
                    apply_update(chosen, &mean_loss, stp);
                    loss_sum += mean_loss * static_cast<double>(chosen.size());
                    selected_total += static_cast<std::int64_t>(chosen.size());
                    deltas.push_back(decision.delta);
                    if (stp) trace->steps.push_back(std::move(st));
                });
            }
        } else {
            // Epoch-level selection over the persistent score table.
            std::map<std::int64_t, double> table;
            for (std::int64_t id : train_ids) table[id] = scores_table[id];
            const PruneDecision decision = select_topk(table, train_ids, keep_fraction);
            if (hooks && hooks->on_decision) {
                hooks->on_decision(decision, train_ids.size(), epoch, pair.step);
            }

            std::vector<std::int64_t> subset(decision.selected_ids.begin(),
                                             decision.selected_ids.end());
            const auto order = epoch_shuffle(subset, config.seed, epoch);
            for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
                const std::size_t end = std::min(order.size(),
                                                 begin + static_cast<std::size_t>(config.batch_size));
                const std::vector<std::int64_t> batch_ids(order.begin() + begin,
                                                          order.begin() + end);
                guarded(epoch, [&] {
                    // Refresh persistent scores for selected samples only.
                    for (std::int64_t id : batch_ids) {
                        scores_table[id] = score_sample(dataset.samples[id], ParameterVector{});
                    }
                    double mean_loss = 0.0;
                    apply_update(batch_ids, &mean_loss, nullptr);
                    loss_sum += mean_loss * static_cast<double>(batch_ids.size());
                    selected_total += static_cast<std::int64_t>(batch_ids.size());
                });
            }
            deltas.push_back(decision.delta);
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = selected_total > 0 ? loss_sum / static_cast<double>(selected_total) : 0.0;
        record.selected_count = selected_total;
        record.val_metric = evaluate_split(pair.online, dataset, Split::val, spec, &clock);
        record.test_metric = evaluate_split(pair.online, dataset, Split::test, spec, &clock);
        double dmin = deltas.front(), dmax = deltas.front(), dsum = 0.0;
        for (double d : deltas) {
            dmin = std::min(dmin, d);
            dmax = std::max(dmax, d);
            dsum += d;
        }
        record.delta_stats = {dmin, dsum / static_cast<double>(deltas.size()), dmax};
        record.wall_time_seconds =
            static_cast<double>(clock.units - epoch_start_units) * work::kSecondsPerUnit;
        result.epochs.push_back(record);
    }

    result.final_online = pair.online;
    result.final_reference = pair.reference;
    result.final_scores = std::move(scores_table);
    for (const EpochRecord& r : result.epochs) result.total_train_seconds += r.wall_time_seconds;
    return result;
}

}  // namespace dprune
