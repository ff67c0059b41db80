#pragma once

// Composite local objective: cross-entropy plus at most one distillation or
// proximal term, with its exact gradient.

#include "fedssd/distill.hpp"
#include "fedssd/nn.hpp"

namespace fedssd {

struct LossBreakdown {
    double cross_entropy = 0.0;
    double regularizer = 0.0;  // distillation or proximal term

    double total() const noexcept { return cross_entropy + regularizer; }
};

struct LossEvaluation {
    LossBreakdown loss;
    ModelParams grad;
};

LossEvaluation loss_and_gradient(const ModelParams& params, const Batch& batch,
                                 const CompositeLossSpec& spec);

LossBreakdown composite_loss(const ModelParams& params, const Batch& batch,
                             const CompositeLossSpec& spec);

// Gradient of composite_loss, averaged over the batch.
ModelParams backward(const ModelParams& params, const Batch& batch,
                     const CompositeLossSpec& spec);

}  // namespace fedssd
