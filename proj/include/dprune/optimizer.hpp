#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dprune/error.hpp"
#include "dprune/model.hpp"

namespace dprune {

// params - alpha * gradient, elementwise.
inline ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& gradient,
                                double alpha) {
    if (params.size() != gradient.size()) {
        throw DimensionError("sgd_step: params and gradient differ in length");
    }
    if (!(alpha > 0.0)) throw PreconditionError("sgd_step: alpha must be positive");
    ParameterVector out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) out[i] = params[i] - alpha * gradient[i];
    return out;
}

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    ParameterVector m;  // first moment
    ParameterVector v;  // second moment
    long t = 0;

    static AdamState init(std::size_t param_count) {
        AdamState s;
        s.m.assign(param_count, 0.0);
        s.v.assign(param_count, 0.0);
        s.t = 0;
        return s;
    }
};

// Standard bias-corrected adaptive-moment update.
inline void adam_step(AdamState& state, ParameterVector& params, const ParameterVector& gradient,
                      const AdamConfig& config) {
    if (params.size() != gradient.size() || params.size() != state.m.size()) {
        throw DimensionError("adam_step: shape mismatch between params, gradient, and state");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * gradient[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * gradient[i] * gradient[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
    }
}

}  // namespace dprune
