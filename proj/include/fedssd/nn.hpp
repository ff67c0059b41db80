#pragma once

// Minimal multilayer perceptron: dense layers, ReLU on hidden layers, linear
// logits on the output layer, exact gradients and SGD with momentum.

#include "fedssd/matrix.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace fedssd {

struct DenseLayer {
    Matrix weight;              // [fan_out x fan_in]
    std::vector<double> bias;   // [fan_out]

    std::size_t fan_in() const noexcept { return weight.cols(); }
    std::size_t fan_out() const noexcept { return weight.rows(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class ModelParams {
  public:
    ModelParams() = default;
    explicit ModelParams(std::vector<DenseLayer> layers);

    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
    std::vector<DenseLayer>& layers() noexcept { return layers_; }

    std::size_t input_dim() const;
    std::size_t num_classes() const;
    std::size_t parameter_count() const noexcept;

    // Throws dimension_mismatch (with layer index) or non_finite.
    void validate() const;

    bool same_shape(const ModelParams& other) const noexcept;

    // Visits every coefficient in canonical order: per layer, weights
    // row-major, then bias.
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& layer : layers_) {
            for (double w : layer.weight.values()) fn(w);
            for (double b : layer.bias) fn(b);
        }
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

  private:
    std::vector<DenseLayer> layers_;
};

// Same-shape copy with every coefficient set to zero.
ModelParams zeros_like(const ModelParams& params);

// Coefficients in canonical order.
std::vector<double> flatten(const ModelParams& params);

// Inverse of flatten against the shape of `shape`.
ModelParams unflatten(const ModelParams& shape, std::span<const double> values);

// Seeded uniform init in [-s, s], s = sqrt(6 / (fan_in + fan_out)); biases zero.
ModelParams init_mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                     std::size_t num_classes, std::uint64_t seed);

struct Batch {
    Matrix inputs;            // [b x d]
    std::vector<int> labels;  // [b]
};

// Checks row/label alignment and label range.
void validate_batch(const Batch& batch, std::size_t num_classes);

Matrix forward_logits(const ModelParams& params, const Matrix& inputs);
inline Matrix forward_logits(const ModelParams& params, const Batch& batch) {
    return forward_logits(params, batch.inputs);
}

// Layer inputs kept for backpropagation. activations[0] is the batch input,
// activations[l] the post-ReLU output feeding layer l.
struct ForwardTrace {
    std::vector<Matrix> activations;
    Matrix logits;
};

ForwardTrace forward_trace(const ModelParams& params, const Matrix& inputs);

// Chain rule from a gradient w.r.t. the logits back to the parameters.
ModelParams backprop(const ModelParams& params, const ForwardTrace& trace,
                     const Matrix& logit_grad);

// Row-wise softmax with max subtraction.
Matrix softmax_probs(const Matrix& logits);

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over rows of -log(max(p_true, 1e-12)).
double cross_entropy(const Matrix& probs, std::span<const int> labels);

// d(mean CE)/d(logits) = (p - onehot) / b.
Matrix cross_entropy_logit_grad(const Matrix& probs, std::span<const int> labels);

std::vector<std::size_t> predict(const ModelParams& params, const Matrix& inputs);

struct OptimizerState {
    ModelParams velocity;
    double learning_rate = 0.01;
    double momentum = 0.9;

    static OptimizerState fresh(const ModelParams& params, double learning_rate, double momentum);
};

// v' = momentum * v + g;  w' = w - lr * v'.
std::pair<ModelParams, OptimizerState> sgd_step(const ModelParams& params, const ModelParams& grads,
                                                 const OptimizerState& state);

// In-place variant used by the training loop; same arithmetic as sgd_step.
void sgd_step_inplace(ModelParams& params, const ModelParams& grads, OptimizerState& state);

}  // namespace fedssd
