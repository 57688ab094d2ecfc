#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dprune/metrics.hpp"
#include "dprune/rng.hpp"

using namespace dprune;

namespace {

// Brute-force Mann-Whitney pair counting, the oracle for roc_auc.
double roc_auc_brute(const std::vector<double>& scores, const std::vector<int>& labels) {
    long long concordant2 = 0;  // doubled to keep ties integral
    long long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) concordant2 += 2;
            else if (scores[i] == scores[j]) concordant2 += 1;
        }
    }
    return (static_cast<double>(concordant2) / 2.0) / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("roc_auc: worked pair-counting example") {
    CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
}

TEST_CASE("roc_auc: perfect separation and all-tied scores") {
    CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
}

TEST_CASE("roc_auc: single-class labels are undefined") {
    CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {0, 0}), UndefinedMetricError);
}

TEST_CASE("roc_auc equals brute-force pair counting exactly on random instances") {
    Rng rng(31337);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid so ties are common
            scores[i] = static_cast<double>(rng.below(10)) / 10.0;
            labels[i] = rng.uniform() < 0.5 ? 0 : 1;
            has_pos |= labels[i] == 1;
            has_neg |= labels[i] == 0;
        }
        if (!has_pos) labels[0] = 1;
        if (!has_neg) labels[n - 1] = 0;
        CHECK(roc_auc(scores, labels) == roc_auc_brute(scores, labels));
    }
}

TEST_CASE("roc_auc is invariant under strictly monotone score transforms") {
    Rng rng(5);
    std::vector<double> scores(30);
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.normal();
        labels[i] = i % 3 == 0 ? 1 : 0;
    }
    std::vector<double> warped(scores.size());
    std::transform(scores.begin(), scores.end(), warped.begin(),
                   [](double s) { return std::exp(2.0 * s) + 1.0; });
    CHECK(roc_auc(scores, labels) == roc_auc(warped, labels));
}

TEST_CASE("roc_auc flips under score negation when scores are distinct") {
    std::vector<double> scores{0.11, 0.42, 0.27, 0.93, 0.55, 0.08};
    std::vector<int> labels{0, 1, 0, 1, 1, 0};
    std::vector<double> negated(scores.size());
    std::transform(scores.begin(), scores.end(), negated.begin(), [](double s) { return -s; });
    CHECK(roc_auc(scores, labels) + roc_auc(negated, labels) == 1.0);
}

TEST_CASE("average_precision: perfect ranking is 1") {
    CHECK(average_precision({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(average_precision({0.7, 0.1}, {1, 0}) == 1.0);
}

TEST_CASE("average_precision: single positive at rank 2 gives 0.5") {
    CHECK(average_precision({0.2, 0.9}, {1, 0}) == 0.5);
}

TEST_CASE("average_precision: hand-evaluated step sums") {
    // ranking by score: ids 0,1,2,3,4 with labels 1,0,1,1,0
    // hits at ranks 1,3,4 -> AP = (1/1 + 2/3 + 3/4) / 3 = 29/36
    CHECK(average_precision({0.9, 0.8, 0.7, 0.6, 0.5}, {1, 0, 1, 1, 0}) ==
          doctest::Approx(29.0 / 36.0).epsilon(1e-15));
    // tie between index 0 (neg) and index 1 (pos): stable order keeps index 0 first
    CHECK(average_precision({0.5, 0.5}, {0, 1}) == 0.5);
    // same scores, labels swapped: positive now first in stable order
    CHECK(average_precision({0.5, 0.5}, {1, 0}) == 1.0);
}

TEST_CASE("average_precision: no positives is undefined") {
    CHECK_THROWS_AS(average_precision({0.4, 0.2}, {0, 0}), UndefinedMetricError);
}

TEST_CASE("average_precision averages to prevalence under random ranking") {
    // The expectation approaches prevalence as the instance grows; 400 samples
    // put the finite-size bias well inside the 0.02 tolerance.
    Rng rng(4242);
    std::vector<int> labels(400);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < 100 ? 1 : 0;
    const double prevalence = 0.25;
    double sum = 0.0;
    const int shuffles = 1000;
    for (int t = 0; t < shuffles; ++t) {
        std::vector<double> scores(labels.size());
        for (double& s : scores) s = rng.uniform();
        sum += average_precision(scores, labels);
    }
    CHECK(std::abs(sum / shuffles - prevalence) <= 0.02);
}

TEST_CASE("mae basics") {
    CHECK(mae({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
    CHECK(mae({1.0, 3.0}, {2.0, 2.0}) == 1.0);
    CHECK_THROWS_AS(mae({}, {}), PreconditionError);
}

TEST_CASE("mae matches a scratch recomputation on 100 random pairs") {
    Rng rng(808);
    std::vector<double> p(100), t(100);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = rng.normal(0.0, 3.0);
        t[i] = rng.normal(0.0, 3.0);
    }
    double scratch = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) scratch += std::abs(p[i] - t[i]);
    scratch /= 100.0;
    CHECK(mae(p, t) == doctest::Approx(scratch).epsilon(1e-15));
}

TEST_CASE("mae is translation invariant") {
    Rng rng(9);
    std::vector<double> p(20), t(20), ps(20), ts(20);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = rng.normal();
        t[i] = rng.normal();
        ps[i] = p[i] + 5.25;
        ts[i] = t[i] + 5.25;
    }
    CHECK(mae(p, t) == doctest::Approx(mae(ps, ts)).epsilon(1e-12));
}

TEST_CASE("aggregate_seeds: singleton, textbook, and scratch recomputation") {
    auto [m1, s1] = aggregate_seeds({85.1});
    CHECK(m1 == 85.1);
    CHECK(s1 == 0.0);

    auto [m2, s2] = aggregate_seeds({1.0, 2.0, 3.0});
    CHECK(m2 == 2.0);
    CHECK(s2 == 1.0);

    const std::vector<double> five{0.81, 0.83, 0.79, 0.84, 0.80};
    double mean = 0.0;
    for (double v : five) mean += v;
    mean /= 5.0;
    double ss = 0.0;
    for (double v : five) ss += (v - mean) * (v - mean);
    const double stddev = std::sqrt(ss / 4.0);
    auto [m3, s3] = aggregate_seeds(five);
    CHECK(m3 == doctest::Approx(mean).epsilon(1e-15));
    CHECK(s3 == doctest::Approx(stddev).epsilon(1e-15));
}

TEST_CASE("accuracy") {
    CHECK(accuracy({1, 0, 1, 1}, {1, 0, 0, 1}) == 0.75);
    CHECK_THROWS_AS(accuracy({}, {}), PreconditionError);
}
