#include "fedssd/confusion.hpp"
#include "fedssd/distill.hpp"
#include "fedssd/error.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fedssd;
using fedssd::testing::numeric_matrix_gradient;
using fedssd::testing::random_matrix;

namespace {

// Logits equal the input, so each row's argmax is read straight off the data.
ModelParams identity_teacher(std::size_t K) {
    Matrix w(K, K);
    for (std::size_t k = 0; k < K; ++k) w(k, k) = 1.0;
    return ModelParams({DenseLayer{std::move(w), std::vector<double>(K, 0.0)}});
}

// Nine samples, three per class. Predicted classes:
//   class 0: 0, 0, 1
//   class 1: 1, 1, 1
//   class 2: 2, 0 (tie between 0 and 2), 2
LabeledDataset nine_sample_fixture() {
    LabeledDataset ds;
    ds.num_classes = 3;
    ds.features = Matrix(9, 3, {1, 0, 0,  2, 1, 0,  0, 1, 0,
                                0, 1, 0,  0, 3, 1,  1, 2, 0,
                                0, 0, 1,  1, 0, 1,  0, 0, 5});
    ds.labels = {0, 0, 0, 1, 1, 1, 2, 2, 2};
    return ds;
}

CredibilityMatrix from_rows(std::size_t K, std::vector<double> values) {
    return CredibilityMatrix{Matrix(K, K, std::move(values)), std::vector<std::size_t>(K, 1), 0};
}

}  // namespace

TEST_CASE("credibility_matrix: hand-counted three-class fixture") {
    const auto ds = nine_sample_fixture();
    const auto teacher = identity_teacher(3);

    ConfusionCounts expected(3);
    expected(0, 0) = 2;
    expected(0, 1) = 1;
    expected(1, 1) = 3;
    expected(2, 2) = 2;
    expected(2, 0) = 1;
    CHECK(confusion_counts(teacher, ds) == expected);

    const auto cm = credibility_matrix(teacher, ds);
    const Matrix want(3, 3, {2.0 / 3, 1.0 / 3, 0, 0, 1, 0, 1.0 / 3, 0, 2.0 / 3});
    CHECK(cm.a == want);
    CHECK(cm.support == std::vector<std::size_t>{3, 3, 3});
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (double v : cm.a.row(r)) s += v;
        CHECK(std::abs(s - 1.0) < 1e-9);
    }

    const auto w = class_weights(cm);
    CHECK(w[0] == doctest::Approx(4.0 / 9).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(w[2] == doctest::Approx(2.0 / 3).epsilon(1e-15));
}

TEST_CASE("credibility_matrix: perfect and constant teachers") {
    auto ds = nine_sample_fixture();
    SUBCASE("always right gives the identity") {
        for (std::size_t r = 0; r < ds.size(); ++r) {
            for (std::size_t k = 0; k < 3; ++k) ds.features(r, k) = (static_cast<int>(k) == ds.labels[r]);
        }
        const auto cm = credibility_matrix(identity_teacher(3), ds);
        CHECK(cm.a == Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
        CHECK(class_weights(cm) == std::vector<double>{1, 1, 1});
    }
    SUBCASE("constant logits predict class 0 everywhere") {
        ModelParams flat({DenseLayer{Matrix(3, 3, 0.0), {0.5, 0.5, 0.5}}});
        const auto cm = credibility_matrix(flat, ds);
        CHECK(cm.a == Matrix(3, 3, {1, 0, 0, 1, 0, 0, 1, 0, 0}));
    }
    SUBCASE("missing class") {
        ds.labels = {0, 0, 0, 1, 1, 1, 1, 1, 1};
        try {
            credibility_matrix(identity_teacher(3), ds);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::empty_class);
        }
    }
}

TEST_CASE("credibility matrix JSON round trip") {
    auto cm = credibility_matrix(identity_teacher(3), nine_sample_fixture());
    cm.round = 12;
    const auto back = credibility_from_json(to_json(cm));
    CHECK(back.a == cm.a);
    CHECK(back.support == cm.support);
    CHECK(back.round == 12);
    auto j = to_json(cm);
    j["matrix"].erase(1);
    CHECK_THROWS_AS(credibility_from_json(j), Error);
}

TEST_CASE("class_weights") {
    SUBCASE("recall times one minus the worst intrusion") {
        const auto cm = from_rows(3, {0.9, 0.1, 0.0, 0.1, 0.8, 0.1, 0.3, 0.2, 0.5});
        CHECK(class_weights(cm)[1] == doctest::Approx(0.64).epsilon(1e-15));
    }
    SUBCASE("matches a naive double loop on random row-stochastic matrices") {
        std::mt19937_64 rng(77);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t K = 2 + trial % 7;
            Matrix a(K, K);
            for (std::size_t r = 0; r < K; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < K; ++c) s += (a(r, c) = unit(rng));
                for (std::size_t c = 0; c < K; ++c) a(r, c) /= s;
            }
            const auto w = class_weights(CredibilityMatrix{a, std::vector<std::size_t>(K, 1), 0});
            for (std::size_t k1 = 0; k1 < K; ++k1) {
                double worst = -1.0;
                for (std::size_t k = 0; k < K; ++k) {
                    if (k == k1) continue;
                    if (a(k, k1) > worst) worst = a(k, k1);
                }
                CHECK(w[k1] == a(k1, k1) * (1.0 - worst));
                CHECK(w[k1] >= 0.0);
                CHECK(w[k1] <= 1.0);
            }
        }
    }
}

TEST_CASE("sample_weight") {
    CHECK(sample_weight(0.0) == 0.0);
    CHECK(sample_weight(1.0) == 1.0);
    CHECK(sample_weight(0.75) == 0.5);
    CHECK_THROWS_AS(sample_weight(-0.01), Error);
    CHECK_THROWS_AS(sample_weight(1.01), Error);
    CHECK_THROWS_AS(sample_weight(std::nan("")), Error);
    double prev = sample_weight(0.0);
    for (int i = 1; i <= 1000; ++i) {
        const double cur = sample_weight(i / 1000.0);
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("weight_vector") {
    const std::vector<double> ones{1, 1, 1};
    SUBCASE("hopeless sample disables every channel") {
        CHECK(weight_vector(ones, 0.0, 0.5) == std::vector<double>{0, 0, 0});
    }
    SUBCASE("perfect teacher reaches 0.9 M_max") {
        for (double m : weight_vector(ones, 1.0, 0.01)) CHECK(m == doctest::Approx(0.009).epsilon(1e-15));
    }
    SUBCASE("mixed channels match elementwise evaluation") {
        const std::vector<double> mc{0.2, 0.5, 0.9, 0.0};
        const auto m = weight_vector(mc, 0.4, 2.0);
        // 0.2*0.4=0.08 below the dead zone; 0.5*0.4-0.1=0.1; 0.9*0.4-0.1=0.26.
        CHECK(m[0] == 0.0);
        CHECK(m[1] == doctest::Approx(0.2).epsilon(1e-14));
        CHECK(m[2] == doctest::Approx(0.52).epsilon(1e-14));
        CHECK(m[3] == 0.0);
    }
    SUBCASE("experimental dead-zone override") {
        CHECK(weight_vector(ones, 0.5, 1.0, 0.0) == std::vector<double>{0.5, 0.5, 0.5});
    }
}

TEST_CASE("batch_weight_vectors uses the teacher probability of the true label") {
    const Matrix z(2, 2, {0.0, 0.0, 40.0, 0.0});
    const std::vector<int> y{0, 0};
    const std::vector<double> mc{1.0, 0.5};
    const Matrix m = batch_weight_vectors(z, y, mc, 1.0);
    const double s = 1.0 - std::sqrt(0.5);
    CHECK(m(0, 0) == doctest::Approx(s - 0.1));
    CHECK(m(0, 1) == doctest::Approx(0.5 * s - 0.1));
    CHECK(m(1, 0) == doctest::Approx(0.9));
    CHECK(m(1, 1) == doctest::Approx(0.4));
    CHECK_THROWS_AS(batch_weight_vectors(z, std::vector<int>{0}, mc, 1.0), Error);
}

TEST_CASE("ssd_loss") {
    SUBCASE("hand-evaluated two-channel case") {
        const auto r = ssd_loss(Matrix(1, 2, {2, 7}), Matrix(1, 2, {0, 3}), Matrix(1, 2, {0.5, 0}));
        CHECK(r.loss == 1.0);
        CHECK(r.grad(0, 0) == -1.0);
        CHECK(r.grad(0, 1) == 0.0);
    }
    SUBCASE("agreement and zero weights give zero") {
        std::mt19937_64 rng(1);
        const Matrix zt = random_matrix(4, 3, rng), zs = random_matrix(4, 3, rng);
        const Matrix w = random_matrix(4, 3, rng);
        const auto same = ssd_loss(zt, zt, w);
        CHECK(same.loss == 0.0);
        for (double g : same.grad.values()) CHECK(g == 0.0);
        const auto off = ssd_loss(zt, zs, Matrix(4, 3, 0.0));
        CHECK(off.loss == 0.0);
        for (double g : off.grad.values()) CHECK(g == 0.0);
    }
    SUBCASE("gradient matches central differences") {
        std::mt19937_64 rng(2);
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix zt = random_matrix(5, 4, rng, 3.0), zs = random_matrix(5, 4, rng, 3.0);
            Matrix w = random_matrix(5, 4, rng);
            for (double& v : w.values()) v = std::abs(v);
            const auto r = ssd_loss(zt, zs, w);
            const Matrix num = numeric_matrix_gradient(zs, [&](const Matrix& z) { return ssd_loss(zt, z, w).loss; });
            for (std::size_t i = 0; i < num.size(); ++i) {
                CHECK(fedssd::testing::relative_error(r.grad.values()[i], num.values()[i]) < 1e-4);
            }
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(ssd_loss(Matrix(1, 2), Matrix(1, 3), Matrix(1, 2)), Error);
        CHECK_THROWS_AS(ssd_loss(Matrix(1, 2), Matrix(1, 2), Matrix(2, 2)), Error);
    }
}

TEST_CASE("kl_distill_loss") {
    std::mt19937_64 rng(3);
    SUBCASE("identical logits") {
        const Matrix z = random_matrix(3, 4, rng);
        CHECK(kl_distill_loss(z, z, 2.0, 0.5).loss == 0.0);
    }
    SUBCASE("zero alpha") {
        const auto r = kl_distill_loss(random_matrix(3, 4, rng), random_matrix(3, 4, rng), 1.0, 0.0);
        CHECK(r.loss == 0.0);
        for (double g : r.grad.values()) CHECK(g == 0.0);
    }
    SUBCASE("two-class case matches central differences") {
        const Matrix zt(1, 2, {0.3, -1.2});
        const Matrix zs(1, 2, {1.1, 0.4});
        for (double tau : {0.5, 1.0, 4.0}) {
            const auto r = kl_distill_loss(zt, zs, tau, 0.7);
            const Matrix num = numeric_matrix_gradient(zs, [&](const Matrix& z) { return kl_distill_loss(zt, z, tau, 0.7).loss; });
            for (std::size_t i = 0; i < 2; ++i) {
                CHECK(fedssd::testing::relative_error(r.grad.values()[i], num.values()[i]) < 1e-4);
            }
            // Closed form for a single row.
            const double pt0 = 1.0 / (1.0 + std::exp((zt(0, 1) - zt(0, 0)) / tau));
            const double ps0 = 1.0 / (1.0 + std::exp((zs(0, 1) - zs(0, 0)) / tau));
            const double kl = pt0 * std::log(pt0 / ps0) + (1 - pt0) * std::log((1 - pt0) / (1 - ps0));
            CHECK(r.loss == doctest::Approx(0.7 * tau * tau * kl).epsilon(1e-12));
        }
    }
    SUBCASE("bad temperature") {
        CHECK_THROWS_AS(kl_distill_loss(Matrix(1, 2), Matrix(1, 2), 0.0, 1.0), Error);
    }
}

TEST_CASE("mse_distill_loss") {
    std::mt19937_64 rng(4);
    SUBCASE("identical logits") {
        const Matrix z = random_matrix(3, 4, rng);
        CHECK(mse_distill_loss(z, z, 0.3).loss == 0.0);
    }
    SUBCASE("two-row hand sum") {
        const Matrix zt(2, 2, {1, 2, 3, 4});
        const Matrix zs(2, 2, {0, 0, 3, 5});
        const auto r = mse_distill_loss(zt, zs, 0.5);
        CHECK(r.loss == doctest::Approx(0.5 * (1 + 4 + 0 + 1) / 2.0).epsilon(1e-15));
        CHECK(r.grad(0, 0) == doctest::Approx(-0.5));
        CHECK(r.grad(1, 1) == doctest::Approx(0.5));
    }
    SUBCASE("equals the selective loss with constant weight sqrt(alpha)") {
        for (int trial = 0; trial < 50; ++trial) {
            const Matrix zt = random_matrix(6, 5, rng, 2.0), zs = random_matrix(6, 5, rng, 2.0);
            const double alpha = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
            const auto a = mse_distill_loss(zt, zs, alpha);
            const auto b = ssd_loss(zt, zs, Matrix(6, 5, std::sqrt(alpha)));
            CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
            for (std::size_t i = 0; i < a.grad.size(); ++i) {
                CHECK(a.grad.values()[i] == doctest::Approx(b.grad.values()[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("prox_term") {
    const auto scalar = [](double v) { return ModelParams({DenseLayer{Matrix(1, 1, {v}), {0.0}}}); };
    SUBCASE("scalar example") {
        const auto r = prox_term(scalar(3.0), scalar(1.0), 0.01);
        CHECK(r.loss == doctest::Approx(0.02).epsilon(1e-15));
        CHECK(r.grad.layers()[0].weight(0, 0) == doctest::Approx(0.02).epsilon(1e-15));
        CHECK(r.grad.layers()[0].bias[0] == 0.0);
    }
    SUBCASE("at the anchor and with zero mu") {
        std::mt19937_64 rng(5);
        const auto w = fedssd::testing::random_model(3, {4}, 2, rng);
        const auto g = fedssd::testing::random_model(3, {4}, 2, rng);
        CHECK(prox_term(w, w, 0.3).loss == 0.0);
        CHECK(prox_term(w, g, 0.0).loss == 0.0);
    }
    SUBCASE("shape mismatch") {
        std::mt19937_64 rng(5);
        CHECK_THROWS_AS(prox_term(fedssd::testing::random_model(3, {4}, 2, rng),
                                  fedssd::testing::random_model(3, {5}, 2, rng), 0.1),
                        Error);
    }
}

TEST_CASE("weight bound property") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t K = 2 + trial % 9;
        std::vector<double> mc(K);
        for (double& v : mc) v = unit(rng);
        const double m_max = 2.0 * unit(rng);
        const auto m = weight_vector(mc, sample_weight(unit(rng)), m_max);
        for (double v : m) {
            CHECK(v >= 0.0);
            CHECK(v <= 0.9 * m_max);
        }
    }
}

TEST_CASE("CompositeLossSpec hyperparameter validation") {
    CompositeLossSpec spec;
    spec.mode = LossMode::ssd;
    spec.coefficient = -0.1;
    CHECK_THROWS_AS(spec.validate_hyperparameters(), Error);
    spec.coefficient = 0.1;
    CHECK_NOTHROW(spec.validate_hyperparameters());
    spec.mode = LossMode::kl_const;
    spec.temperature = 0.0;
    CHECK_THROWS_AS(spec.validate_hyperparameters(), Error);
    CHECK(to_string(LossMode::ssd) == "ssd");
}
