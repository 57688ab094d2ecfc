#pragma once

// Dual-model pruning engine: EMA reference tracking, loss-discrepancy scoring,
// rank-based top-k selection, EMA-gradient bookkeeping, and the baseline
// scorer suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dprune/error.hpp"
#include "dprune/model.hpp"
#include "dprune/rng.hpp"

namespace dprune {

// Online parameters plus the EMA reference, sharing one layout.
struct ModelPair {
    ParameterVector online;     // updated by gradient descent
    ParameterVector reference;  // updated by EMA toward online
    double beta = 0.5;          // pace coefficient, in [0, 1]
    long step = 0;              // batch step t

    static ModelPair init(ParameterVector pretrained, double beta) {
        ModelPair pair;
        pair.online = pretrained;
        pair.reference = std::move(pretrained);
        pair.beta = beta;
        pair.step = 0;
        return pair;
    }
};

// reference' = beta * online + (1 - beta) * reference. The step counter is
// advanced by the trainer, not here.
inline ModelPair ema_update(ModelPair pair) {
    if (pair.beta < 0.0 || pair.beta > 1.0) {
        throw PreconditionError("ema_update: beta must be in [0, 1]");
    }
    if (pair.online.size() != pair.reference.size()) {
        throw DimensionError("ema_update: online and reference differ in length");
    }
    for (std::size_t i = 0; i < pair.reference.size(); ++i) {
        pair.reference[i] = pair.beta * pair.online[i] + (1.0 - pair.beta) * pair.reference[i];
    }
    return pair;
}

// |L(x, online) - L(x, reference)|
inline double score_molpeg(const Sample& sample, const ModelPair& pair, const ModelSpec& spec) {
    const double online_loss = forward_loss(pair.online, sample, spec);
    const double reference_loss = forward_loss(pair.reference, sample, spec);
    return std::abs(online_loss - reference_loss);
}

// ---------------------------------------------------------------------------
// Baseline scorers
// ---------------------------------------------------------------------------

enum class ScorerKind {
    molpeg,
    soft_random,
    loss_magnitude,
    grand,
    el2n,
    forgetting,
    entropy,
    least_confidence,
};

inline const char* scorer_name(ScorerKind k) {
    switch (k) {
        case ScorerKind::molpeg: return "molpeg";
        case ScorerKind::soft_random: return "soft_random";
        case ScorerKind::loss_magnitude: return "loss_magnitude";
        case ScorerKind::grand: return "grand";
        case ScorerKind::el2n: return "el2n";
        case ScorerKind::forgetting: return "forgetting";
        case ScorerKind::entropy: return "entropy";
        case ScorerKind::least_confidence: return "least_confidence";
    }
    return "?";
}

inline ScorerKind parse_scorer(const std::string& name) {
    for (ScorerKind k : {ScorerKind::molpeg, ScorerKind::soft_random, ScorerKind::loss_magnitude,
                         ScorerKind::grand, ScorerKind::el2n, ScorerKind::forgetting,
                         ScorerKind::entropy, ScorerKind::least_confidence}) {
        if (name == scorer_name(k)) return k;
    }
    throw PreconditionError("unknown scorer '" + name + "'");
}

// Cumulative correct->incorrect transition counts, keyed by sample id.
struct ForgettingState {
    struct Entry {
        int forget_count = 0;
        int last_correct = -1;  // -1 unknown, else 0/1
    };
    std::map<std::int64_t, Entry> entries;

    // Returns the cumulative forget count after observing `correct`.
    int observe(std::int64_t id, bool correct) {
        Entry& e = entries[id];
        if (e.last_correct == 1 && !correct) ++e.forget_count;
        e.last_correct = correct ? 1 : 0;
        return e.forget_count;
    }
};

inline double score_baseline(ScorerKind kind, const Sample& sample, const ModelPair& pair,
                             const ModelSpec& spec, Rng* rng_stream = nullptr,
                             ForgettingState* forgetting_state = nullptr) {
    switch (kind) {
        case ScorerKind::molpeg:
            return score_molpeg(sample, pair, spec);
        case ScorerKind::soft_random:
            if (!rng_stream) throw PreconditionError("soft_random scorer needs an rng stream");
            return rng_stream->uniform();
        case ScorerKind::loss_magnitude:
            return forward_loss(pair.online, sample, spec);
        case ScorerKind::grand:
            return norm2(per_sample_gradient(pair.online, sample, spec));
        case ScorerKind::el2n: {
            if (spec.task != Task::classification) {
                throw UnsupportedTaskError("el2n is defined for classification only");
            }
            auto p = forward_probabilities(pair.online, sample, spec);
            p[sample.label()] -= 1.0;
            double ss = 0.0;
            for (double v : p) ss += v * v;
            return std::sqrt(ss);
        }
        case ScorerKind::entropy: {
            if (spec.task != Task::classification) {
                throw UnsupportedTaskError("entropy is defined for classification only");
            }
            const auto p = forward_probabilities(pair.online, sample, spec);
            double h = 0.0;
            for (double v : p) {
                if (v > 0.0) h -= v * std::log(v);
            }
            return h;
        }
        case ScorerKind::least_confidence: {
            if (spec.task != Task::classification) {
                throw UnsupportedTaskError("least_confidence is defined for classification only");
            }
            const auto p = forward_probabilities(pair.online, sample, spec);
            return 1.0 - *std::max_element(p.begin(), p.end());
        }
        case ScorerKind::forgetting: {
            if (spec.task != Task::classification) {
                throw UnsupportedTaskError("forgetting is defined for classification only");
            }
            if (!forgetting_state) {
                throw PreconditionError("forgetting scorer needs a ForgettingState");
            }
            const bool correct = predict_class(pair.online, sample, spec) == sample.label();
            return static_cast<double>(forgetting_state->observe(sample.id, correct));
        }
    }
    throw PreconditionError("score_baseline: unhandled scorer kind");
}

// ---------------------------------------------------------------------------
// Top-k selection with deterministic tie-breaking
// ---------------------------------------------------------------------------

struct PruneDecision {
    std::set<std::int64_t> selected_ids;
    double delta = 0.0;                    // realized threshold: min selected score
    std::map<std::int64_t, double> scores;  // every scored batch sample
};

// keep_count = ceil(keep_fraction * |batch|); the keep_count highest-scoring
// ids win, ties broken by ascending sample id. The small guard on the ceil
// absorbs float dust in keep_fraction (e.g. 1 - 0.7).
inline std::size_t keep_count_for(double keep_fraction, std::size_t batch_size) {
    const double raw = keep_fraction * static_cast<double>(batch_size);
    auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    if (count == 0) count = 1;
    return std::min(count, batch_size);
}

inline PruneDecision select_topk(const std::map<std::int64_t, double>& scores,
                                 const std::vector<std::int64_t>& batch_ids,
                                 double keep_fraction) {
    if (batch_ids.empty()) throw PreconditionError("select_topk: batch_ids is empty");
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0) {
        throw PreconditionError("select_topk: keep_fraction must be in (0, 1]");
    }

    std::vector<std::pair<std::int64_t, double>> ranked;
    ranked.reserve(batch_ids.size());
    for (std::int64_t id : batch_ids) {
        const auto it = scores.find(id);
        if (it == scores.end()) {
            throw PreconditionError("select_topk: no score for sample " + std::to_string(id));
        }
        ranked.emplace_back(id, it->second);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    const std::size_t keep = keep_count_for(keep_fraction, ranked.size());
    PruneDecision decision;
    for (const auto& [id, score] : ranked) decision.scores.emplace(id, score);
    decision.delta = ranked[keep - 1].second;
    for (std::size_t i = 0; i < keep; ++i) decision.selected_ids.insert(ranked[i].first);
    return decision;
}

// ---------------------------------------------------------------------------
// EMA-gradient bookkeeping
// ---------------------------------------------------------------------------

// Weighted record of past selected-batch average gradients. An entry recorded
// at step s contributes (1 - beta)^(t - s) * gradient when queried at step t.
struct GradientHistory {
    struct Entry {
        ParameterVector avg_gradient;
        long step_index = 0;
    };
    std::vector<Entry> entries;  // strictly increasing step_index
    double beta = 0.5;
    double truncation_tol = 1e-9;

    long last_step() const { return entries.empty() ? -1 : entries.back().step_index; }
};

inline GradientHistory accumulate_ema_gradient(GradientHistory history,
                                               ParameterVector selected_batch_avg_gradient,
                                               long step) {
    if (!history.entries.empty() && step <= history.last_step()) {
        throw PreconditionError("accumulate_ema_gradient: step " + std::to_string(step) +
                                " is not after last recorded step " +
                                std::to_string(history.last_step()));
    }
    history.entries.push_back({std::move(selected_batch_avg_gradient), step});
    // Drop entries whose weight at the current step already fell below tol.
    const double decay = 1.0 - history.beta;
    std::vector<GradientHistory::Entry> kept;
    kept.reserve(history.entries.size());
    for (auto& e : history.entries) {
        const double w = std::pow(decay, static_cast<double>(step - e.step_index));
        if (w >= history.truncation_tol) kept.push_back(std::move(e));
    }
    history.entries = std::move(kept);
    return history;
}

// v_ema at `current_step`: sum of (1 - beta)^(current_step - step_index) * grad.
// Empty history yields the zero vector of the given size.
inline ParameterVector ema_gradient(const GradientHistory& history, long current_step,
                                    std::size_t param_count) {
    if (!history.entries.empty() && current_step < history.last_step() + 1) {
        throw PreconditionError("ema_gradient: current_step must be past every recorded step");
    }
    ParameterVector v(param_count, 0.0);
    const double decay = 1.0 - history.beta;
    for (const auto& e : history.entries) {
        const double w = std::pow(decay, static_cast<double>(current_step - e.step_index));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += w * e.avg_gradient[i];
    }
    return v;
}

}  // namespace dprune
