#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "dprune/model.hpp"
#include "dprune/theory.hpp"

using namespace dprune;

namespace {

ModelSpec regression_spec(int input_dim, std::vector<int> hidden = {}) {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims = std::move(hidden);
    spec.output_dim = 1;
    spec.task = Task::regression;
    spec.activation = Activation::tanh;
    return spec;
}

ModelSpec classification_spec(int input_dim, int classes, std::vector<int> hidden = {}) {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims = std::move(hidden);
    spec.output_dim = classes;
    spec.task = Task::classification;
    spec.activation = Activation::tanh;
    return spec;
}

Sample make_sample(std::int64_t id, std::vector<double> features, double target) {
    Sample s;
    s.id = id;
    s.features = std::move(features);
    s.target = target;
    return s;
}

}  // namespace

TEST_CASE("forward_loss: zero regression model on zero target") {
    const auto spec = regression_spec(3);
    const ParameterVector params(spec.param_count(), 0.0);
    const auto s = make_sample(0, {1.0, -2.0, 0.5}, 0.0);
    CHECK(forward_loss(params, s, spec) == 0.0);
}

TEST_CASE("forward_loss: uniform two-class softmax gives ln 2") {
    const auto spec = classification_spec(2, 2);
    const ParameterVector params(spec.param_count(), 0.0);  // logits both zero
    const auto s = make_sample(0, {0.4, -1.1}, 1.0);
    CHECK(forward_loss(params, s, spec) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("forward_loss: seeded 2-4-2 MLP matches scalar recomputation") {
    const auto spec = classification_spec(2, 2, {4});
    const auto params = init_params(spec, 42);
    const auto s = make_sample(7, {0.3, -0.7}, 1.0);

    // straight-line recomputation from the structured view
    const auto layers = unflatten(params, spec);
    double h[4];
    for (int i = 0; i < 4; ++i) {
        h[i] = std::tanh(layers[0].weights[i][0] * 0.3 + layers[0].weights[i][1] * (-0.7) +
                         layers[0].bias[i]);
    }
    double z[2];
    for (int j = 0; j < 2; ++j) {
        z[j] = layers[1].bias[j];
        for (int i = 0; i < 4; ++i) z[j] += layers[1].weights[j][i] * h[i];
    }
    const double expected = std::log(std::exp(z[0]) + std::exp(z[1])) - z[1];

    CHECK(forward_loss(params, s, spec) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("forward_loss errors name the offending dimension") {
    const auto spec = regression_spec(3);
    const ParameterVector params(spec.param_count(), 0.0);
    const auto bad = make_sample(5, {1.0, 2.0}, 0.0);
    CHECK_THROWS_AS(forward_loss(params, bad, spec), DimensionError);
    CHECK_THROWS_WITH_AS(forward_loss(params, bad, spec),
                         doctest::Contains("input_dim"), DimensionError);

    const auto ok = make_sample(5, {1.0, 2.0, 3.0}, 0.0);
    const ParameterVector short_params(2, 0.0);
    CHECK_THROWS_AS(forward_loss(short_params, ok, spec), DimensionError);
}

TEST_CASE("forward_loss is non-negative on random inputs for both tasks") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const bool classify = trial % 2 == 0;
        const auto spec = classify ? classification_spec(4, 3, {5}) : regression_spec(4, {5});
        auto params = init_params(spec, 100 + trial);
        for (double& p : params) p += rng.normal() * 0.5;
        Sample s;
        s.id = trial;
        s.features = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        s.target = classify ? static_cast<double>(rng.below(3)) : rng.normal();
        CHECK(forward_loss(params, s, spec) >= 0.0);
    }
}

TEST_CASE("per_sample_gradient: zero-weight linear regression has closed form -2y*x") {
    const auto spec = regression_spec(3);
    const ParameterVector params(spec.param_count(), 0.0);
    const auto s = make_sample(0, {1.5, -0.5, 2.0}, 3.0);
    const auto grad = per_sample_gradient(params, s, spec);
    // layout: w0 w1 w2 bias
    CHECK(grad[0] == doctest::Approx(-2.0 * 3.0 * 1.5).epsilon(1e-14));
    CHECK(grad[1] == doctest::Approx(-2.0 * 3.0 * -0.5).epsilon(1e-14));
    CHECK(grad[2] == doctest::Approx(-2.0 * 3.0 * 2.0).epsilon(1e-14));
    CHECK(grad[3] == doctest::Approx(-2.0 * 3.0).epsilon(1e-14));
}

TEST_CASE("per_sample_gradient agrees with central finite differences on 100 random cases") {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const bool classify = trial % 2 == 0;
        const int input_dim = 2 + static_cast<int>(rng.below(4));
        const int hidden = 2 + static_cast<int>(rng.below(5));
        const auto spec = classify ? classification_spec(input_dim, 3, {hidden})
                                   : regression_spec(input_dim, {hidden});
        auto params = init_params(spec, 7000 + trial);
        for (double& p : params) p += rng.normal() * 0.3;
        Sample s;
        s.id = trial;
        s.features.resize(input_dim);
        for (double& f : s.features) f = rng.normal();
        s.target = classify ? static_cast<double>(rng.below(3)) : rng.normal();

        const auto grad = per_sample_gradient(params, s, spec);
        const auto fd = theory::finite_difference_oracle(params, s, spec, 1e-5);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            worst = std::max(worst, theory::relative_error(grad[i], fd[i]));
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("per_sample_gradient norm vanishes as the correct-class logit gap grows") {
    const auto spec = classification_spec(1, 2);
    const auto s = make_sample(0, {1.0}, 0.0);
    double previous = std::numeric_limits<double>::infinity();
    for (double gap : {2.0, 5.0, 10.0}) {
        ParameterVector params(spec.param_count(), 0.0);
        params[0] = gap;  // w for class 0: logits become [gap, 0]
        const double n = norm2(per_sample_gradient(params, s, spec));
        CHECK(n < previous);
        previous = n;
    }
}

TEST_CASE("batch_gradient: singleton batch equals the per-sample gradient") {
    const auto spec = regression_spec(2, {3});
    const auto params = init_params(spec, 1);
    const auto s = make_sample(0, {0.2, 0.4}, 1.0);
    const auto single = per_sample_gradient(params, s, spec);
    const auto batch = batch_gradient(params, std::vector<Sample>{s}, spec);
    CHECK(single == batch);
}

TEST_CASE("batch_gradient: opposite gradients cancel") {
    const auto spec = regression_spec(2);
    const ParameterVector params(spec.param_count(), 0.0);
    const auto a = make_sample(0, {1.0, -2.0}, 1.5);
    const auto b = make_sample(1, {1.0, -2.0}, -1.5);  // same features, negated target
    const auto grad = batch_gradient(params, std::vector<Sample>{a, b}, spec);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("batch_gradient: 8-sample batch equals the elementwise mean of per-sample gradients") {
    const auto spec = classification_spec(3, 2, {4});
    const auto params = init_params(spec, 5);
    Rng rng(99);
    std::vector<Sample> batch;
    for (int i = 0; i < 8; ++i) {
        batch.push_back(make_sample(i, {rng.normal(), rng.normal(), rng.normal()},
                                    static_cast<double>(rng.below(2))));
    }
    const auto got = batch_gradient(params, batch, spec);

    ParameterVector expected(params.size(), 0.0);
    for (const Sample& s : batch) {
        const auto g = per_sample_gradient(params, s, spec);
        for (std::size_t i = 0; i < g.size(); ++i) expected[i] += g[i];
    }
    for (double& v : expected) v /= 8.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
}

TEST_CASE("batch_gradient is linear over batch concatenation") {
    const auto spec = regression_spec(2, {3});
    const auto params = init_params(spec, 9);
    Rng rng(17);
    std::vector<Sample> a, b, all;
    for (int i = 0; i < 5; ++i) {
        a.push_back(make_sample(i, {rng.normal(), rng.normal()}, rng.normal()));
        all.push_back(a.back());
    }
    for (int i = 5; i < 8; ++i) {
        b.push_back(make_sample(i, {rng.normal(), rng.normal()}, rng.normal()));
        all.push_back(b.back());
    }
    const auto ga = batch_gradient(params, a, spec);
    const auto gb = batch_gradient(params, b, spec);
    const auto gall = batch_gradient(params, all, spec);
    for (std::size_t i = 0; i < gall.size(); ++i) {
        const double combined = (5.0 * ga[i] + 3.0 * gb[i]) / 8.0;
        CHECK(gall[i] == doctest::Approx(combined).epsilon(1e-12));
    }
}

TEST_CASE("batch_gradient rejects an empty batch") {
    const auto spec = regression_spec(2);
    const ParameterVector params(spec.param_count(), 0.0);
    CHECK_THROWS_AS(batch_gradient(params, std::vector<Sample>{}, spec), PreconditionError);
}

TEST_CASE("init_params: deterministic, seed-sensitive, correct count") {
    const auto spec = classification_spec(2, 2, {4});
    CHECK(spec.param_count() == 22);  // 2*4+4 + 4*2+2

    const auto p1 = init_params(spec, 123);
    const auto p2 = init_params(spec, 123);
    CHECK(p1 == p2);

    const auto p3 = init_params(spec, 124);
    CHECK(p1 != p3);

    // biases zero, weights inside the fan-in bound
    const auto layers = unflatten(p1, spec);
    for (const auto& layer : layers) {
        for (double b : layer.bias) CHECK(b == 0.0);
    }
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 2; ++c) {
            CHECK(std::abs(layers[0].weights[r][c]) <= 1.0 / std::sqrt(2.0));
        }
    }
}

TEST_CASE("parameter layout round-trips through the structured view") {
    const auto spec = classification_spec(3, 2, {4, 3});
    const auto params = init_params(spec, 77);
    const auto rebuilt = flatten(unflatten(params, spec), spec);
    CHECK(params == rebuilt);
}

TEST_CASE("ModelSpec validation") {
    ModelSpec bad;
    bad.input_dim = 2;
    bad.output_dim = 1;
    bad.task = Task::classification;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);

    bad.task = Task::regression;
    bad.output_dim = 2;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
}
