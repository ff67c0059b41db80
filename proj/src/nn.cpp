#include "fedssd/nn.hpp"

#include "fedssd/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace fedssd {

ModelParams::ModelParams(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {}

std::size_t ModelParams::input_dim() const {
    if (layers_.empty()) throw Error(ErrorCode::invalid_argument, "model has no layers");
    return layers_.front().fan_in();
}

std::size_t ModelParams::num_classes() const {
    if (layers_.empty()) throw Error(ErrorCode::invalid_argument, "model has no layers");
    return layers_.back().fan_out();
}

std::size_t ModelParams::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
    return n;
}

void ModelParams::validate() const {
    if (layers_.empty()) throw Error(ErrorCode::invalid_argument, "model has no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.bias.size() != layer.fan_out()) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("layer {}: bias has {} entries, weight has {} rows", l,
                                    layer.bias.size(), layer.fan_out()),
                        l);
        }
        if (l > 0 && layer.fan_in() != layers_[l - 1].fan_out()) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("layer {}: fan_in {} does not match previous fan_out {}", l,
                                    layer.fan_in(), layers_[l - 1].fan_out()),
                        l);
        }
        auto finite = [](double v) { return std::isfinite(v); };
        if (!std::all_of(layer.weight.values().begin(), layer.weight.values().end(), finite) ||
            !std::all_of(layer.bias.begin(), layer.bias.end(), finite)) {
            throw Error(ErrorCode::non_finite, fmt::format("layer {}: non-finite parameter", l), l);
        }
    }
}

bool ModelParams::same_shape(const ModelParams& other) const noexcept {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (!layers_[l].weight.same_shape(other.layers_[l].weight) ||
            layers_[l].bias.size() != other.layers_[l].bias.size()) {
            return false;
        }
    }
    return true;
}

ModelParams zeros_like(const ModelParams& params) {
    std::vector<DenseLayer> layers;
    layers.reserve(params.layers().size());
    for (const auto& layer : params.layers()) {
        layers.push_back({Matrix(layer.fan_out(), layer.fan_in()),
                          std::vector<double>(layer.fan_out(), 0.0)});
    }
    return ModelParams(std::move(layers));
}

std::vector<double> flatten(const ModelParams& params) {
    std::vector<double> out;
    out.reserve(params.parameter_count());
    params.for_each([&](double v) { out.push_back(v); });
    return out;
}

ModelParams unflatten(const ModelParams& shape, std::span<const double> values) {
    if (values.size() != shape.parameter_count()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("expected {} coefficients, got {}", shape.parameter_count(),
                                values.size()));
    }
    ModelParams out = zeros_like(shape);
    std::size_t k = 0;
    for (auto& layer : out.layers()) {
        for (double& w : layer.weight.values()) w = values[k++];
        for (double& b : layer.bias) b = values[k++];
    }
    return out;
}

ModelParams init_mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                     std::size_t num_classes, std::uint64_t seed) {
    if (input_dim == 0 || num_classes == 0) {
        throw Error(ErrorCode::invalid_argument, "input_dim and num_classes must be positive");
    }
    std::vector<std::size_t> widths{input_dim};
    for (std::size_t h : hidden) {
        if (h == 0) throw Error(ErrorCode::invalid_argument, "hidden width must be positive");
        widths.push_back(h);
    }
    widths.push_back(num_classes);

    std::mt19937_64 rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-s, s);
        DenseLayer layer{Matrix(fan_out, fan_in), std::vector<double>(fan_out, 0.0)};
        for (double& w : layer.weight.values()) w = dist(rng);
        layers.push_back(std::move(layer));
    }
    return ModelParams(std::move(layers));
}

void validate_batch(const Batch& batch, std::size_t num_classes) {
    if (batch.inputs.rows() != batch.labels.size()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("batch has {} rows but {} labels", batch.inputs.rows(),
                                batch.labels.size()));
    }
    for (int y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw Error(ErrorCode::label_out_of_range,
                        fmt::format("label {} outside [0, {})", y, num_classes));
        }
    }
}

namespace {

Matrix dense_forward(const DenseLayer& layer, const Matrix& in, bool relu) {
    Matrix out(in.rows(), layer.fan_out());
    for (std::size_t r = 0; r < in.rows(); ++r) {
        auto x = in.row(r);
        auto y = out.row(r);
        for (std::size_t o = 0; o < layer.fan_out(); ++o) {
            auto w = layer.weight.row(o);
            double acc = layer.bias[o];
            for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
            y[o] = (relu && acc < 0.0) ? 0.0 : acc;
        }
    }
    return out;
}

void check_input(const ModelParams& params, const Matrix& inputs) {
    if (params.layers().empty()) throw Error(ErrorCode::invalid_argument, "model has no layers");
    if (inputs.cols() != params.input_dim()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("layer 0: input width {} does not match fan_in {}", inputs.cols(),
                                params.input_dim()),
                    0);
    }
    const auto& layers = params.layers();
    for (std::size_t l = 1; l < layers.size(); ++l) {
        if (layers[l].fan_in() != layers[l - 1].fan_out()) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("layer {}: fan_in {} does not match previous fan_out {}", l,
                                    layers[l].fan_in(), layers[l - 1].fan_out()),
                        l);
        }
    }
}

}  // namespace

Matrix forward_logits(const ModelParams& params, const Matrix& inputs) {
    check_input(params, inputs);
    const auto& layers = params.layers();
    Matrix a = dense_forward(layers[0], inputs, layers.size() > 1);
    for (std::size_t l = 1; l < layers.size(); ++l) {
        a = dense_forward(layers[l], a, l + 1 < layers.size());
    }
    return a;
}

ForwardTrace forward_trace(const ModelParams& params, const Matrix& inputs) {
    check_input(params, inputs);
    const auto& layers = params.layers();
    ForwardTrace trace;
    trace.activations.reserve(layers.size());
    trace.activations.push_back(inputs);
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        trace.activations.push_back(dense_forward(layers[l], trace.activations.back(), true));
    }
    trace.logits = dense_forward(layers.back(), trace.activations.back(), false);
    return trace;
}

ModelParams backprop(const ModelParams& params, const ForwardTrace& trace,
                     const Matrix& logit_grad) {
    const auto& layers = params.layers();
    if (!logit_grad.same_shape(trace.logits)) {
        throw Error(ErrorCode::dimension_mismatch, "logit gradient shape does not match logits");
    }
    ModelParams grads = zeros_like(params);
    Matrix delta = logit_grad;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& layer = layers[l];
        const Matrix& in = trace.activations[l];
        auto& g = grads.layers()[l];
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            auto d = delta.row(r);
            auto x = in.row(r);
            for (std::size_t o = 0; o < layer.fan_out(); ++o) {
                if (d[o] == 0.0) continue;
                auto gw = g.weight.row(o);
                for (std::size_t i = 0; i < x.size(); ++i) gw[i] += d[o] * x[i];
                g.bias[o] += d[o];
            }
        }
        if (l == 0) break;
        Matrix prev(delta.rows(), layer.fan_in());
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            auto d = delta.row(r);
            auto p = prev.row(r);
            for (std::size_t o = 0; o < layer.fan_out(); ++o) {
                if (d[o] == 0.0) continue;
                auto w = layer.weight.row(o);
                for (std::size_t i = 0; i < p.size(); ++i) p[i] += d[o] * w[i];
            }
            // ReLU mask: the activation feeding this layer was clipped at zero.
            auto x = in.row(r);
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (!(x[i] > 0.0)) p[i] = 0.0;
            }
        }
        delta = std::move(prev);
    }
    return grads;
}

Matrix softmax_probs(const Matrix& logits) {
    Matrix probs(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto z = logits.row(r);
        double top = z.empty() ? 0.0 : z[0];
        for (double v : z) {
            if (std::isnan(v)) throw Error(ErrorCode::non_finite, "softmax input contains NaN");
            top = std::max(top, v);
        }
        if (!std::isfinite(top)) throw Error(ErrorCode::non_finite, "softmax input is not finite");
        auto p = probs.row(r);
        double sum = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            p[k] = std::exp(z[k] - top);
            sum += p[k];
        }
        for (double& v : p) v /= sum;
    }
    return probs;
}

namespace {

void check_labels(const Matrix& probs, std::span<const int> labels) {
    if (probs.rows() != labels.size()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("{} probability rows but {} labels", probs.rows(), labels.size()));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
            throw Error(ErrorCode::label_out_of_range,
                        fmt::format("label {} outside [0, {})", y, probs.cols()));
        }
    }
}

}  // namespace

double cross_entropy(const Matrix& probs, std::span<const int> labels) {
    check_labels(probs, labels);
    if (labels.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const double p = probs(r, static_cast<std::size_t>(labels[r]));
        total += -std::log(std::max(p, kProbabilityFloor));
    }
    return total / static_cast<double>(labels.size());
}

Matrix cross_entropy_logit_grad(const Matrix& probs, std::span<const int> labels) {
    check_labels(probs, labels);
    Matrix grad = probs;
    const double inv_b = 1.0 / static_cast<double>(labels.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        grad(r, static_cast<std::size_t>(labels[r])) -= 1.0;
        for (double& v : grad.row(r)) v *= inv_b;
    }
    return grad;
}

std::vector<std::size_t> predict(const ModelParams& params, const Matrix& inputs) {
    const Matrix logits = forward_logits(params, inputs);
    std::vector<std::size_t> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) out[r] = argmax(logits.row(r));
    return out;
}

OptimizerState OptimizerState::fresh(const ModelParams& params, double learning_rate,
                                     double momentum) {
    if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("learning rate {} / momentum {} out of range", learning_rate,
                                momentum));
    }
    return OptimizerState{zeros_like(params), learning_rate, momentum};
}

void sgd_step_inplace(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
    if (!params.same_shape(grads) || !params.same_shape(state.velocity)) {
        throw Error(ErrorCode::dimension_mismatch, "sgd_step: params, grads and velocity differ in shape");
    }
    auto update = [&](std::span<double> w, std::span<const double> g, std::span<double> v) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = state.momentum * v[i] + g[i];
            w[i] -= state.learning_rate * v[i];
        }
    };
    for (std::size_t l = 0; l < params.layers().size(); ++l) {
        auto& layer = params.layers()[l];
        const auto& grad = grads.layers()[l];
        auto& vel = state.velocity.layers()[l];
        update(layer.weight.values(), grad.weight.values(), vel.weight.values());
        update(layer.bias, grad.bias, vel.bias);
    }
}

std::pair<ModelParams, OptimizerState> sgd_step(const ModelParams& params, const ModelParams& grads,
                                                 const OptimizerState& state) {
    ModelParams next = params;
    OptimizerState next_state = state;
    sgd_step_inplace(next, grads, next_state);
    return {std::move(next), std::move(next_state)};
}

}  // namespace fedssd
