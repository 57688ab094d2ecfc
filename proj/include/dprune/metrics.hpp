#pragma once

// Evaluation metrics: ROC-AUC (Mann-Whitney with tie handling), average
// precision (step interpolation, stable index order on ties), MAE, accuracy,
// and multi-seed mean/std aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dprune/error.hpp"

namespace dprune {

// Equals the Mann-Whitney statistic: (concordant + 0.5 * tied) / (P * N).
// Computed via tie-averaged ranks; exact for integer-and-half rank sums.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("roc_auc: scores and labels differ in length");
    }
    if (scores.empty()) throw PreconditionError("roc_auc: empty input");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::size_t positives = 0;
    for (int y : labels) positives += (y != 0);
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw UndefinedMetricError("roc_auc: needs both classes present");
    }

    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        // 1-based ranks i+1 .. j averaged over the tie group
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] != 0) positive_rank_sum += avg_rank;
        }
        i = j;
    }
    const double p = static_cast<double>(positives);
    const double n = static_cast<double>(negatives);
    return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

// AP = sum_k (R_k - R_{k-1}) * P_k over the score-descending ranking.
// Equal scores keep their original index order (stable sort).
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("average_precision: scores and labels differ in length");
    }
    if (scores.empty()) throw PreconditionError("average_precision: empty input");

    std::size_t positives = 0;
    for (int y : labels) positives += (y != 0);
    if (positives == 0) {
        throw UndefinedMetricError("average_precision: needs at least one positive");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] != 0) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    return ap / static_cast<double>(positives);
}

inline double mae(const std::vector<double>& predictions, const std::vector<double>& targets) {
    if (predictions.size() != targets.size()) {
        throw DimensionError("mae: predictions and targets differ in length");
    }
    if (predictions.empty()) throw PreconditionError("mae: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        acc += std::abs(predictions[i] - targets[i]);
    }
    return acc / static_cast<double>(predictions.size());
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& actual) {
    if (predicted.size() != actual.size()) {
        throw DimensionError("accuracy: predicted and actual differ in length");
    }
    if (predicted.empty()) throw PreconditionError("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += (predicted[i] == actual[i]);
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// Named metric value with the sample count it was computed over.
struct MetricResult {
    std::string name;
    double value = 0.0;
    std::size_t n_samples = 0;
};

// Mean and sample standard deviation (n-1 denominator; n == 1 reports std 0).
inline std::pair<double, double> aggregate_seeds(const std::vector<double>& values) {
    if (values.empty()) throw PreconditionError("aggregate_seeds: empty input");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

}  // namespace dprune
