#pragma once

// Teacher credibility and the distillation / regularization loss terms.
//
// The selective term weights each logit channel k of sample x by
//
//   M(x)[k] = M_max * max(0, M_class[k] * M_sample(x) - 0.1)
//   M_class[k] = A[k][k] * (1 - max_{j != k} A[j][k])
//   M_sample(x) = 1 - sqrt(1 - p_teacher(x)[y])
//
// where A is the teacher's row-normalized confusion matrix on the server's
// auxiliary set, and penalizes ||M(x) * (z_teacher - z_student)||^2 averaged
// over the batch.

#include "fedssd/data.hpp"
#include "fedssd/matrix.hpp"
#include "fedssd/nn.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace fedssd {

struct CredibilityMatrix {
    Matrix a;                            // [K x K], row = true class, col = predicted
    std::vector<std::size_t> support;    // aux samples per true class
    long round = -1;

    std::size_t num_classes() const noexcept { return a.rows(); }
};

CredibilityMatrix credibility_matrix(const ModelParams& teacher, const LabeledDataset& aux);

// Row-major matrix plus support counts and round index.
nlohmann::json to_json(const CredibilityMatrix& cm);
CredibilityMatrix credibility_from_json(const nlohmann::json& j);

std::vector<double> class_weights(const CredibilityMatrix& cm);

double sample_weight(double p_true);

inline constexpr double kDeadZone = 0.1;

std::vector<double> weight_vector(std::span<const double> class_weights, double sample_weight,
                                  double m_max, double dead_zone = kDeadZone);

// Per-sample weight rows M(x) for a batch, from the teacher's logits.
Matrix batch_weight_vectors(const Matrix& teacher_logits, std::span<const int> labels,
                            std::span<const double> class_weights, double m_max,
                            double dead_zone = kDeadZone);

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;  // w.r.t. the student logits
};

// (1/b) sum ||M (z_t - z_s)||^2; grad = (2/b) M*M*(z_s - z_t).
LossAndGrad ssd_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                     const Matrix& weights);

// alpha * tau^2 * mean KL(softmax(z_t / tau) || softmax(z_s / tau)).
LossAndGrad kl_distill_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                            double temperature, double alpha);

// alpha * (1/b) sum ||z_t - z_s||^2.
LossAndGrad mse_distill_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                             double alpha);

struct ParamLossAndGrad {
    double loss = 0.0;
    ModelParams grad;
};

// (mu/2) ||w - w_global||^2; grad = mu (w - w_global).
ParamLossAndGrad prox_term(const ModelParams& w, const ModelParams& w_global, double mu);

enum class LossMode { ce_only, ssd, kl_const, mse_const, prox };

std::string_view to_string(LossMode mode);

struct CompositeLossSpec {
    LossMode mode = LossMode::ce_only;
    // M_max for ssd, alpha for kl_const / mse_const, mu for prox.
    double coefficient = 0.0;
    double temperature = 1.0;
    // Experimental: overrides the fixed 0.1 dead zone of the selective weights.
    double dead_zone = kDeadZone;
    // Frozen global model; the distillation teacher or the proximal anchor.
    std::shared_ptr<const ModelParams> teacher;
    // M_class, ssd mode only.
    std::vector<double> class_weights;

    bool needs_teacher() const noexcept { return mode != LossMode::ce_only; }

    // Coefficient / temperature ranges; does not require the teacher.
    void validate_hyperparameters() const;
};

}  // namespace fedssd
