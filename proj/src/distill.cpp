#include "fedssd/distill.hpp"

#include "fedssd/confusion.hpp"
#include "fedssd/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace fedssd {

ConfusionCounts confusion_counts(const ModelParams& params, const LabeledDataset& ds) {
    ds.validate();
    if (params.num_classes() != ds.num_classes) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("model has {} outputs, dataset '{}' has {} classes",
                                params.num_classes(), ds.name, ds.num_classes));
    }
    ConfusionCounts cm(ds.num_classes);
    const auto predicted = predict(params, ds.features);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        ++cm(static_cast<std::size_t>(ds.labels[i]), predicted[i]);
    }
    return cm;
}

std::size_t ConfusionCounts::row_total(std::size_t truth) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < num_classes; ++j) n += (*this)(truth, j);
    return n;
}

std::size_t ConfusionCounts::total() const {
    std::size_t n = 0;
    for (std::size_t c : counts) n += c;
    return n;
}

std::size_t ConfusionCounts::diagonal() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < num_classes; ++k) n += (*this)(k, k);
    return n;
}

CredibilityMatrix credibility_matrix(const ModelParams& teacher, const LabeledDataset& aux) {
    const ConfusionCounts counts = confusion_counts(teacher, aux);
    const std::size_t K = counts.num_classes;
    CredibilityMatrix out{Matrix(K, K), std::vector<std::size_t>(K, 0), -1};
    for (std::size_t k1 = 0; k1 < K; ++k1) {
        const std::size_t support = counts.row_total(k1);
        if (support == 0) {
            throw Error(ErrorCode::empty_class,
                        fmt::format("auxiliary set has no samples of class {}", k1));
        }
        out.support[k1] = support;
        for (std::size_t k2 = 0; k2 < K; ++k2) {
            out.a(k1, k2) = static_cast<double>(counts(k1, k2)) / static_cast<double>(support);
        }
    }
    return out;
}

nlohmann::json to_json(const CredibilityMatrix& cm) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < cm.a.rows(); ++r) {
        rows.push_back(std::vector<double>(cm.a.row(r).begin(), cm.a.row(r).end()));
    }
    return {{"round", cm.round}, {"num_classes", cm.num_classes()}, {"matrix", rows},
            {"support", cm.support}};
}

CredibilityMatrix credibility_from_json(const nlohmann::json& j) {
    const auto K = j.at("num_classes").get<std::size_t>();
    CredibilityMatrix cm{Matrix(K, K), j.at("support").get<std::vector<std::size_t>>(),
                         j.at("round").get<long>()};
    const auto& rows = j.at("matrix");
    if (rows.size() != K || cm.support.size() != K) {
        throw Error(ErrorCode::dimension_mismatch, "credibility JSON is not K x K");
    }
    for (std::size_t r = 0; r < K; ++r) {
        const auto row = rows[r].get<std::vector<double>>();
        if (row.size() != K) throw Error(ErrorCode::dimension_mismatch, "credibility JSON row length");
        std::ranges::copy(row, cm.a.row(r).begin());
    }
    return cm;
}

std::vector<double> class_weights(const CredibilityMatrix& cm) {
    const std::size_t K = cm.num_classes();
    std::vector<double> out(K);
    for (std::size_t k1 = 0; k1 < K; ++k1) {
        double worst_intrusion = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            if (k != k1) worst_intrusion = std::max(worst_intrusion, cm.a(k, k1));
        }
        out[k1] = cm.a(k1, k1) * (1.0 - worst_intrusion);
    }
    return out;
}

double sample_weight(double p_true) {
    if (!(p_true >= 0.0 && p_true <= 1.0)) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("teacher probability {} outside [0, 1]", p_true));
    }
    return 1.0 - std::sqrt(1.0 - p_true);
}

std::vector<double> weight_vector(std::span<const double> class_weights, double sample_weight,
                                  double m_max, double dead_zone) {
    std::vector<double> out(class_weights.size());
    for (std::size_t k = 0; k < class_weights.size(); ++k) {
        out[k] = m_max * std::max(0.0, class_weights[k] * sample_weight - dead_zone);
    }
    return out;
}

Matrix batch_weight_vectors(const Matrix& teacher_logits, std::span<const int> labels,
                            std::span<const double> class_weights, double m_max,
                            double dead_zone) {
    if (teacher_logits.rows() != labels.size() || teacher_logits.cols() != class_weights.size()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("teacher logits {}x{} vs {} labels and {} class weights",
                                teacher_logits.rows(), teacher_logits.cols(), labels.size(),
                                class_weights.size()));
    }
    const Matrix probs = softmax_probs(teacher_logits);
    Matrix weights(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto y = static_cast<std::size_t>(labels[r]);
        if (y >= probs.cols()) {
            throw Error(ErrorCode::label_out_of_range, fmt::format("label {} out of range", y));
        }
        // Rounding can push a saturated softmax a hair above one.
        const double p_true = std::min(probs(r, y), 1.0);
        const auto m = weight_vector(class_weights, sample_weight(p_true), m_max, dead_zone);
        std::ranges::copy(m, weights.row(r).begin());
    }
    return weights;
}

namespace {

void check_pair(const Matrix& teacher, const Matrix& student, std::string_view what) {
    if (!teacher.same_shape(student)) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("{}: teacher logits {}x{} vs student logits {}x{}", what,
                                teacher.rows(), teacher.cols(), student.rows(), student.cols()));
    }
}

}  // namespace

LossAndGrad ssd_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                     const Matrix& weights) {
    check_pair(teacher_logits, student_logits, "ssd_loss");
    if (!weights.same_shape(student_logits)) {
        throw Error(ErrorCode::dimension_mismatch, "ssd_loss: weight matrix shape differs from logits");
    }
    LossAndGrad out{0.0, Matrix(student_logits.rows(), student_logits.cols())};
    const std::size_t b = student_logits.rows();
    if (b == 0) return out;
    const double inv_b = 1.0 / static_cast<double>(b);
    const auto zt = teacher_logits.values();
    const auto zs = student_logits.values();
    const auto m = weights.values();
    auto g = out.grad.values();
    for (std::size_t i = 0; i < zs.size(); ++i) {
        const double diff = zs[i] - zt[i];
        const double mm = m[i] * m[i];
        out.loss += mm * diff * diff;
        g[i] = 2.0 * inv_b * mm * diff;
    }
    out.loss *= inv_b;
    return out;
}

LossAndGrad kl_distill_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                            double temperature, double alpha) {
    check_pair(teacher_logits, student_logits, "kl_distill_loss");
    if (!(temperature > 0.0) || !(alpha >= 0.0)) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("kl_distill_loss: need tau > 0 and alpha >= 0 (tau={}, alpha={})",
                                temperature, alpha));
    }
    const std::size_t b = student_logits.rows();
    LossAndGrad out{0.0, Matrix(b, student_logits.cols())};
    if (b == 0 || alpha == 0.0) return out;

    Matrix zt = teacher_logits;
    Matrix zs = student_logits;
    for (double& v : zt.values()) v /= temperature;
    for (double& v : zs.values()) v /= temperature;
    const Matrix pt = softmax_probs(zt);
    const Matrix ps = softmax_probs(zs);

    const double inv_b = 1.0 / static_cast<double>(b);
    double kl = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        // log-softmax through the shifted logits avoids log(0) on saturated rows.
        const auto lt = zt.row(r);
        const auto ls = zs.row(r);
        const double mt = *std::ranges::max_element(lt);
        const double ms = *std::ranges::max_element(ls);
        double st = 0.0, ss = 0.0;
        for (std::size_t k = 0; k < lt.size(); ++k) {
            st += std::exp(lt[k] - mt);
            ss += std::exp(ls[k] - ms);
        }
        const double log_zt = mt + std::log(st);
        const double log_zs = ms + std::log(ss);
        for (std::size_t k = 0; k < lt.size(); ++k) {
            const double p = pt(r, k);
            if (p > 0.0) kl += p * ((lt[k] - log_zt) - (ls[k] - log_zs));
            out.grad(r, k) = alpha * temperature * inv_b * (ps(r, k) - p);
        }
    }
    out.loss = alpha * temperature * temperature * kl * inv_b;
    return out;
}

LossAndGrad mse_distill_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                             double alpha) {
    check_pair(teacher_logits, student_logits, "mse_distill_loss");
    if (!(alpha >= 0.0)) throw Error(ErrorCode::invalid_argument, "mse_distill_loss: alpha < 0");
    const std::size_t b = student_logits.rows();
    LossAndGrad out{0.0, Matrix(b, student_logits.cols())};
    if (b == 0) return out;
    const double inv_b = 1.0 / static_cast<double>(b);
    const auto zt = teacher_logits.values();
    const auto zs = student_logits.values();
    auto g = out.grad.values();
    for (std::size_t i = 0; i < zs.size(); ++i) {
        const double diff = zs[i] - zt[i];
        out.loss += diff * diff;
        g[i] = 2.0 * alpha * inv_b * diff;
    }
    out.loss *= alpha * inv_b;
    return out;
}

ParamLossAndGrad prox_term(const ModelParams& w, const ModelParams& w_global, double mu) {
    if (!w.same_shape(w_global)) {
        throw Error(ErrorCode::dimension_mismatch, "prox_term: parameter shapes differ");
    }
    if (!(mu >= 0.0)) throw Error(ErrorCode::invalid_argument, "prox_term: mu < 0");
    ParamLossAndGrad out{0.0, zeros_like(w)};
    double sq = 0.0;
    for (std::size_t l = 0; l < w.layers().size(); ++l) {
        auto term = [&](std::span<const double> a, std::span<const double> b, std::span<double> g) {
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                sq += d * d;
                g[i] = mu * d;
            }
        };
        const auto& lw = w.layers()[l];
        const auto& lg = w_global.layers()[l];
        auto& out_l = out.grad.layers()[l];
        term(lw.weight.values(), lg.weight.values(), out_l.weight.values());
        term(lw.bias, lg.bias, out_l.bias);
    }
    out.loss = 0.5 * mu * sq;
    return out;
}

std::string_view to_string(LossMode mode) {
    switch (mode) {
        case LossMode::ce_only: return "ce_only";
        case LossMode::ssd: return "ssd";
        case LossMode::kl_const: return "kl_const";
        case LossMode::mse_const: return "mse_const";
        case LossMode::prox: return "prox";
    }
    return "unknown";
}

void CompositeLossSpec::validate_hyperparameters() const {
    if (!(coefficient >= 0.0) || !std::isfinite(coefficient)) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("{} coefficient must be finite and non-negative, got {}",
                                to_string(mode), coefficient));
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("temperature must be positive, got {}", temperature));
    }
    if (!(dead_zone >= 0.0 && dead_zone <= 1.0)) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("dead zone must lie in [0, 1], got {}", dead_zone));
    }
}

}  // namespace fedssd
