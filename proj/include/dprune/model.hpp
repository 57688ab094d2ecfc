#pragma once

// Minimal dense network over a flat 64-bit parameter vector. Exposes exactly
// what the pruning engine and the theory checks consume: per-sample losses,
// per-sample reverse-mode gradients, and batch-average gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dprune/error.hpp"
#include "dprune/rng.hpp"

namespace dprune {

using ParameterVector = std::vector<double>;

enum class Task { classification, regression };
enum class Activation { tanh, relu };

inline const char* task_name(Task t) {
    return t == Task::classification ? "classification" : "regression";
}

struct ModelSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int output_dim = 0;
    Task task = Task::classification;
    Activation activation = Activation::tanh;

    // [input_dim, hidden..., output_dim]
    std::vector<int> layer_sizes() const {
        std::vector<int> sizes;
        sizes.reserve(hidden_dims.size() + 2);
        sizes.push_back(input_dim);
        sizes.insert(sizes.end(), hidden_dims.begin(), hidden_dims.end());
        sizes.push_back(output_dim);
        return sizes;
    }

    std::size_t param_count() const {
        const auto sizes = layer_sizes();
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            n += static_cast<std::size_t>(sizes[l + 1]) * (sizes[l] + 1);
        }
        return n;
    }

    void validate() const {
        if (input_dim <= 0) throw PreconditionError("ModelSpec: input_dim must be positive");
        for (int h : hidden_dims) {
            if (h <= 0) throw PreconditionError("ModelSpec: hidden dims must be positive");
        }
        if (task == Task::classification && output_dim < 2) {
            throw PreconditionError("ModelSpec: classification requires output_dim >= 2");
        }
        if (task == Task::regression && output_dim != 1) {
            throw PreconditionError("ModelSpec: regression requires output_dim == 1");
        }
    }
};

struct Sample {
    std::int64_t id = 0;
    std::vector<double> features;
    double target = 0.0;  // class index (classification) or scalar (regression)
    double score = 1.0;   // persistent selection score, starts at 1

    int label() const { return static_cast<int>(target); }
};

// ---------------------------------------------------------------------------
// Parameter layout: per layer, row-major weights (out x in) followed by bias.
// ---------------------------------------------------------------------------

struct LayerLayout {
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    int in = 0;
    int out = 0;
};

inline std::vector<LayerLayout> parameter_layout(const ModelSpec& spec) {
    const auto sizes = spec.layer_sizes();
    std::vector<LayerLayout> layers(sizes.size() - 1);
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        layers[l].in = sizes[l];
        layers[l].out = sizes[l + 1];
        layers[l].weight_offset = offset;
        layers[l].bias_offset = offset + static_cast<std::size_t>(sizes[l]) * sizes[l + 1];
        offset = layers[l].bias_offset + sizes[l + 1];
    }
    return layers;
}

// Structured (per-layer) view of a flat parameter vector.
struct LayerParams {
    std::vector<std::vector<double>> weights;  // [out][in]
    std::vector<double> bias;                  // [out]
};

inline std::vector<LayerParams> unflatten(const ParameterVector& params, const ModelSpec& spec) {
    if (params.size() != spec.param_count()) {
        throw DimensionError("unflatten: params has length " + std::to_string(params.size()) +
                             ", layout requires " + std::to_string(spec.param_count()));
    }
    std::vector<LayerParams> out;
    for (const auto& ll : parameter_layout(spec)) {
        LayerParams lp;
        lp.weights.assign(ll.out, std::vector<double>(ll.in));
        lp.bias.assign(ll.out, 0.0);
        for (int r = 0; r < ll.out; ++r) {
            for (int c = 0; c < ll.in; ++c) {
                lp.weights[r][c] = params[ll.weight_offset + static_cast<std::size_t>(r) * ll.in + c];
            }
            lp.bias[r] = params[ll.bias_offset + r];
        }
        out.push_back(std::move(lp));
    }
    return out;
}

inline ParameterVector flatten(const std::vector<LayerParams>& layers, const ModelSpec& spec) {
    ParameterVector params(spec.param_count(), 0.0);
    const auto layout = parameter_layout(spec);
    if (layers.size() != layout.size()) {
        throw DimensionError("flatten: layer count mismatch");
    }
    for (std::size_t l = 0; l < layout.size(); ++l) {
        const auto& ll = layout[l];
        for (int r = 0; r < ll.out; ++r) {
            for (int c = 0; c < ll.in; ++c) {
                params[ll.weight_offset + static_cast<std::size_t>(r) * ll.in + c] = layers[l].weights[r][c];
            }
            params[ll.bias_offset + r] = layers[l].bias[r];
        }
    }
    return params;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

inline void check_dimensions(const ParameterVector& params, const Sample& sample,
                             const ModelSpec& spec) {
    spec.validate();
    if (sample.features.size() != static_cast<std::size_t>(spec.input_dim)) {
        throw DimensionError("features: sample " + std::to_string(sample.id) + " has length " +
                             std::to_string(sample.features.size()) + ", spec.input_dim is " +
                             std::to_string(spec.input_dim));
    }
    if (params.size() != spec.param_count()) {
        throw DimensionError("params: length " + std::to_string(params.size()) +
                             ", spec layout requires " + std::to_string(spec.param_count()));
    }
}

inline double activate(double z, Activation a) {
    return a == Activation::tanh ? std::tanh(z) : std::max(0.0, z);
}

inline double activate_grad(double z, double a_val, Activation a) {
    return a == Activation::tanh ? 1.0 - a_val * a_val : (z > 0.0 ? 1.0 : 0.0);
}

}  // namespace detail

// Activations per layer as produced by one forward pass; kept for backprop.
struct ForwardTrace {
    std::vector<std::vector<double>> pre;  // z_l, l = 1..L (output layer last, linear)
    std::vector<std::vector<double>> act;  // a_l, l = 0..L (a_0 = input)
};

// Output-layer values (logits for classification, prediction for regression).
inline std::vector<double> forward_output(const ParameterVector& params, const Sample& sample,
                                          const ModelSpec& spec, ForwardTrace* trace = nullptr) {
    detail::check_dimensions(params, sample, spec);
    const auto layout = parameter_layout(spec);
    std::vector<double> act = sample.features;
    if (trace) {
        trace->pre.clear();
        trace->act.clear();
        trace->act.push_back(act);
    }
    for (std::size_t l = 0; l < layout.size(); ++l) {
        const auto& ll = layout[l];
        std::vector<double> z(ll.out, 0.0);
        for (int r = 0; r < ll.out; ++r) {
            double acc = params[ll.bias_offset + r];
            const std::size_t row = ll.weight_offset + static_cast<std::size_t>(r) * ll.in;
            for (int c = 0; c < ll.in; ++c) {
                acc += params[row + c] * act[c];
            }
            z[r] = acc;
        }
        const bool last = (l + 1 == layout.size());
        std::vector<double> a(ll.out);
        for (int r = 0; r < ll.out; ++r) {
            a[r] = last ? z[r] : detail::activate(z[r], spec.activation);
        }
        if (trace) {
            trace->pre.push_back(z);
            trace->act.push_back(a);
        }
        act = std::move(a);
    }
    for (double v : act) {
        if (!std::isfinite(v)) {
            throw NumericError("forward pass produced a non-finite output for sample " +
                               std::to_string(sample.id));
        }
    }
    return act;
}

// Numerically stable softmax (max-subtracted).
inline std::vector<double> softmax(const std::vector<double>& logits) {
    const double zmax = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - zmax);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

inline std::vector<double> forward_probabilities(const ParameterVector& params,
                                                 const Sample& sample, const ModelSpec& spec) {
    if (spec.task != Task::classification) {
        throw UnsupportedTaskError("forward_probabilities requires a classification model");
    }
    return softmax(forward_output(params, sample, spec));
}

inline double loss_from_output(const std::vector<double>& output, const Sample& sample,
                               const ModelSpec& spec) {
    double loss = 0.0;
    if (spec.task == Task::classification) {
        const int y = sample.label();
        if (y < 0 || y >= spec.output_dim) {
            throw PreconditionError("sample " + std::to_string(sample.id) + " has class index " +
                                    std::to_string(y) + " outside [0, " +
                                    std::to_string(spec.output_dim) + ")");
        }
        // cross-entropy via log-sum-exp
        const double zmax = *std::max_element(output.begin(), output.end());
        double sum = 0.0;
        for (double z : output) sum += std::exp(z - zmax);
        loss = zmax + std::log(sum) - output[y];
        loss = std::max(0.0, loss);  // clamp tiny negative rounding residue
    } else {
        const double err = output[0] - sample.target;
        loss = err * err;
    }
    if (!std::isfinite(loss)) {
        throw NumericError("loss is non-finite for sample " + std::to_string(sample.id));
    }
    return loss;
}

inline double forward_loss(const ParameterVector& params, const Sample& sample,
                           const ModelSpec& spec) {
    return loss_from_output(forward_output(params, sample, spec), sample, spec);
}

// Reverse-mode gradient of forward_loss w.r.t. every parameter; layout matches
// the parameter vector. Optionally reports the forward loss.
inline ParameterVector per_sample_gradient(const ParameterVector& params, const Sample& sample,
                                           const ModelSpec& spec, double* loss_out = nullptr) {
    ForwardTrace trace;
    const auto output = forward_output(params, sample, spec, &trace);
    const double loss = loss_from_output(output, sample, spec);
    if (loss_out) *loss_out = loss;

    const auto layout = parameter_layout(spec);
    ParameterVector grad(params.size(), 0.0);

    // dL/dz at the output layer
    std::vector<double> delta;
    if (spec.task == Task::classification) {
        delta = softmax(output);
        delta[sample.label()] -= 1.0;
    } else {
        delta = {2.0 * (output[0] - sample.target)};
    }

    for (std::size_t li = layout.size(); li-- > 0;) {
        const auto& ll = layout[li];
        const auto& a_in = trace.act[li];
        for (int r = 0; r < ll.out; ++r) {
            const std::size_t row = ll.weight_offset + static_cast<std::size_t>(r) * ll.in;
            for (int c = 0; c < ll.in; ++c) {
                grad[row + c] = delta[r] * a_in[c];
            }
            grad[ll.bias_offset + r] = delta[r];
        }
        if (li == 0) break;
        // propagate to the previous (hidden) layer
        std::vector<double> prev(ll.in, 0.0);
        for (int c = 0; c < ll.in; ++c) {
            double acc = 0.0;
            for (int r = 0; r < ll.out; ++r) {
                acc += params[ll.weight_offset + static_cast<std::size_t>(r) * ll.in + c] * delta[r];
            }
            prev[c] = acc * detail::activate_grad(trace.pre[li - 1][c], trace.act[li][c],
                                                  spec.activation);
        }
        delta = std::move(prev);
    }
    return grad;
}

// Arithmetic mean of per-sample gradients, summed in batch order. Optionally
// reports the mean loss over the batch.
inline ParameterVector batch_gradient(const ParameterVector& params,
                                      const std::vector<const Sample*>& batch,
                                      const ModelSpec& spec, double* mean_loss_out = nullptr) {
    if (batch.empty()) throw PreconditionError("batch_gradient: batch is empty");
    ParameterVector sum(params.size(), 0.0);
    double loss_sum = 0.0;
    for (const Sample* s : batch) {
        double loss = 0.0;
        const ParameterVector g = per_sample_gradient(params, *s, spec, &loss);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
        loss_sum += loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : sum) v *= inv;
    if (mean_loss_out) *mean_loss_out = loss_sum * inv;
    return sum;
}

inline ParameterVector batch_gradient(const ParameterVector& params,
                                      const std::vector<Sample>& batch, const ModelSpec& spec,
                                      double* mean_loss_out = nullptr) {
    std::vector<const Sample*> view;
    view.reserve(batch.size());
    for (const Sample& s : batch) view.push_back(&s);
    return batch_gradient(params, view, spec, mean_loss_out);
}

// Deterministic initialization: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
// biases zero. Weights are drawn in layout order.
inline ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParameterVector params(spec.param_count(), 0.0);
    for (const auto& ll : parameter_layout(spec)) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(ll.in));
        for (int r = 0; r < ll.out; ++r) {
            const std::size_t row = ll.weight_offset + static_cast<std::size_t>(r) * ll.in;
            for (int c = 0; c < ll.in; ++c) {
                params[row + c] = rng.uniform(-bound, bound);
            }
        }
        // biases stay zero
    }
    return params;
}

inline int predict_class(const ParameterVector& params, const Sample& sample,
                         const ModelSpec& spec) {
    const auto output = forward_output(params, sample, spec);
    return static_cast<int>(std::max_element(output.begin(), output.end()) - output.begin());
}

// ---------------------------------------------------------------------------
// Small vector helpers shared across modules
// ---------------------------------------------------------------------------

inline double dot(const ParameterVector& a, const ParameterVector& b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2(const ParameterVector& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const ParameterVector& a) {
    for (double v : a) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace dprune
