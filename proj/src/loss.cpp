#include "fedssd/loss.hpp"

#include "fedssd/error.hpp"

#include <fmt/format.h>

#include <optional>

namespace fedssd {

namespace {

void check_spec(const ModelParams& params, const Batch& batch, const CompositeLossSpec& spec) {
    spec.validate_hyperparameters();
    validate_batch(batch, params.num_classes());
    if (spec.needs_teacher() && !spec.teacher) {
        throw Error(ErrorCode::missing_teacher,
                    fmt::format("loss mode '{}' needs the frozen global model, none supplied",
                                to_string(spec.mode)));
    }
    if (spec.teacher && !spec.teacher->same_shape(params)) {
        throw Error(ErrorCode::dimension_mismatch, "teacher and student parameter shapes differ");
    }
    if (spec.mode == LossMode::ssd && spec.class_weights.size() != params.num_classes()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("ssd mode needs {} class weights, got {}", params.num_classes(),
                                spec.class_weights.size()));
    }
}

// Distillation term on the logits, if the mode has one. A zero coefficient
// contributes nothing and the teacher is not evaluated.
std::optional<LossAndGrad> logit_term(const Matrix& student_logits, const Batch& batch,
                                      const CompositeLossSpec& spec) {
    if (spec.coefficient == 0.0) return std::nullopt;
    switch (spec.mode) {
        case LossMode::ssd: {
            const Matrix teacher_logits = forward_logits(*spec.teacher, batch.inputs);
            const Matrix weights = batch_weight_vectors(teacher_logits, batch.labels,
                                                        spec.class_weights, spec.coefficient,
                                                        spec.dead_zone);
            return ssd_loss(teacher_logits, student_logits, weights);
        }
        case LossMode::kl_const:
            return kl_distill_loss(forward_logits(*spec.teacher, batch.inputs), student_logits,
                                   spec.temperature, spec.coefficient);
        case LossMode::mse_const:
            return mse_distill_loss(forward_logits(*spec.teacher, batch.inputs), student_logits,
                                    spec.coefficient);
        case LossMode::ce_only:
        case LossMode::prox:
            return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

LossEvaluation loss_and_gradient(const ModelParams& params, const Batch& batch,
                                 const CompositeLossSpec& spec) {
    check_spec(params, batch, spec);
    const ForwardTrace trace = forward_trace(params, batch.inputs);
    const Matrix probs = softmax_probs(trace.logits);

    LossEvaluation out;
    out.loss.cross_entropy = cross_entropy(probs, batch.labels);
    Matrix logit_grad = cross_entropy_logit_grad(probs, batch.labels);

    if (auto term = logit_term(trace.logits, batch, spec)) {
        out.loss.regularizer = term->loss;
        auto g = logit_grad.values();
        const auto extra = term->grad.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += extra[i];
    }

    out.grad = backprop(params, trace, logit_grad);

    if (spec.mode == LossMode::prox && spec.coefficient != 0.0) {
        const auto prox = prox_term(params, *spec.teacher, spec.coefficient);
        out.loss.regularizer = prox.loss;
        for (std::size_t l = 0; l < out.grad.layers().size(); ++l) {
            auto& gl = out.grad.layers()[l];
            const auto& pl = prox.grad.layers()[l];
            auto gw = gl.weight.values();
            const auto pw = pl.weight.values();
            for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += pw[i];
            for (std::size_t i = 0; i < gl.bias.size(); ++i) gl.bias[i] += pl.bias[i];
        }
    }
    return out;
}

LossBreakdown composite_loss(const ModelParams& params, const Batch& batch,
                             const CompositeLossSpec& spec) {
    check_spec(params, batch, spec);
    const Matrix logits = forward_logits(params, batch.inputs);
    LossBreakdown out;
    out.cross_entropy = cross_entropy(softmax_probs(logits), batch.labels);
    if (auto term = logit_term(logits, batch, spec)) out.regularizer = term->loss;
    if (spec.mode == LossMode::prox && spec.coefficient != 0.0) {
        out.regularizer = prox_term(params, *spec.teacher, spec.coefficient).loss;
    }
    return out;
}

ModelParams backward(const ModelParams& params, const Batch& batch,
                     const CompositeLossSpec& spec) {
    return loss_and_gradient(params, batch, spec).grad;
}

}  // namespace fedssd
