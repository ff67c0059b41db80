#include "fedssd/error.hpp"
#include "fedssd/loss.hpp"
#include "fedssd/nn.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace fedssd;
using fedssd::testing::random_batch;
using fedssd::testing::random_model;

namespace {

ModelParams single_layer(Matrix w, std::vector<double> b) {
    return ModelParams({DenseLayer{std::move(w), std::move(b)}});
}

}  // namespace

TEST_CASE("forward_logits: identity layer passes input through") {
    const auto p = single_layer(Matrix(2, 2, {1, 0, 0, 1}), {0, 0});
    const Matrix z = forward_logits(p, Matrix(1, 2, {3, -1}));
    CHECK(z(0, 0) == 3.0);
    CHECK(z(0, 1) == -1.0);
}

TEST_CASE("forward_logits: dead hidden layer leaves only the output bias") {
    ModelParams p({DenseLayer{Matrix(3, 2, -1.0), {-0.5, -0.5, -0.5}},
                   DenseLayer{Matrix(2, 3, 4.0), {0.25, -7.0}}});
    const Matrix z = forward_logits(p, Matrix(2, 2, {1, 2, 0.5, 3}));
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(z(r, 0) == 0.25);
        CHECK(z(r, 1) == -7.0);
    }
}

TEST_CASE("forward_logits matches a naive loop reimplementation") {
    std::mt19937_64 rng(11);
    const auto p = random_model(5, {7}, 4, rng);
    const Matrix x = fedssd::testing::random_matrix(9, 5, rng);
    const Matrix z = forward_logits(p, x);
    const auto ref = fedssd::testing::naive_forward(p, x);
    for (std::size_t r = 0; r < 9; ++r) {
        for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(z(r, k) - ref[r][k]) < 1e-10);
    }
}

TEST_CASE("forward_logits reports the offending layer on dimension mismatch") {
    std::mt19937_64 rng(3);
    const auto p = random_model(4, {3}, 2, rng);
    try {
        forward_logits(p, Matrix(1, 5));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension_mismatch);
        REQUIRE(e.layer().has_value());
        CHECK(*e.layer() == 0);
    }

    ModelParams broken({DenseLayer{Matrix(3, 4), std::vector<double>(3)},
                        DenseLayer{Matrix(2, 5), std::vector<double>(2)}});
    try {
        forward_logits(broken, Matrix(1, 4));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension_mismatch);
        CHECK(e.layer() == std::optional<std::size_t>(1));
    }
}

TEST_CASE("forward_logits is permutation-equivariant over rows") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = random_model(3, {6, 4}, 3, rng);
        const Matrix x = fedssd::testing::random_matrix(8, 3, rng);
        std::vector<std::size_t> perm(8);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix xp(8, 3);
        for (std::size_t r = 0; r < 8; ++r) std::ranges::copy(x.row(perm[r]), xp.row(r).begin());
        const Matrix z = forward_logits(p, x);
        const Matrix zp = forward_logits(p, xp);
        for (std::size_t r = 0; r < 8; ++r) {
            for (std::size_t k = 0; k < 3; ++k) CHECK(zp(r, k) == z(perm[r], k));
        }
    }
}

TEST_CASE("softmax_probs") {
    SUBCASE("symmetric logits") {
        const Matrix p = softmax_probs(Matrix(1, 2, {0, 0}));
        CHECK(p(0, 0) == 0.5);
        CHECK(p(0, 1) == 0.5);
    }
    SUBCASE("large logits do not overflow") {
        const Matrix p = softmax_probs(Matrix(1, 2, {1000, 0}));
        CHECK(std::isfinite(p(0, 0)));
        CHECK(p(0, 0) == doctest::Approx(1.0));
        CHECK(p(0, 1) < 1e-300);
    }
    SUBCASE("matches extended-precision evaluation") {
        const Matrix p = softmax_probs(Matrix(1, 3, {1, 2, 3}));
        const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L);
        const long double s = e1 + e2 + e3;
        CHECK(std::abs(p(0, 0) - static_cast<double>(e1 / s)) < 1e-15);
        CHECK(std::abs(p(0, 1) - static_cast<double>(e2 / s)) < 1e-15);
        CHECK(std::abs(p(0, 2) - static_cast<double>(e3 / s)) < 1e-15);
    }
    SUBCASE("NaN is rejected") {
        CHECK_THROWS_AS(softmax_probs(Matrix(1, 2, {std::nan(""), 0})), Error);
    }
    SUBCASE("rows are probability vectors") {
        std::mt19937_64 rng(9);
        const Matrix p = softmax_probs(fedssd::testing::random_matrix(50, 6, rng, 20.0));
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double s = 0.0;
            for (double v : p.row(r)) {
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("cross_entropy") {
    SUBCASE("perfect prediction") {
        const Matrix p(2, 3, {0, 1, 0, 1, 0, 0});
        CHECK(cross_entropy(p, std::vector<int>{1, 0}) == 0.0);
    }
    SUBCASE("uniform over four classes") {
        const Matrix p(2, 4, 0.25);
        CHECK(cross_entropy(p, std::vector<int>{0, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
        CHECK(std::abs(cross_entropy(p, std::vector<int>{0, 3}) - 1.3863) < 1e-4);
    }
    SUBCASE("mixed rows match per-sample sum") {
        const Matrix p(3, 3, {0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4});
        const std::vector<int> y{0, 1, 2};
        const double expected = (-std::log(0.7) - std::log(0.1) - std::log(0.4)) / 3.0;
        CHECK(cross_entropy(p, y) == doctest::Approx(expected).epsilon(1e-14));
    }
    SUBCASE("confident wrong prediction is clamped") {
        const Matrix p(1, 2, {1.0, 0.0});
        CHECK(cross_entropy(p, std::vector<int>{1}) == doctest::Approx(-std::log(1e-12)));
    }
    SUBCASE("label out of range") {
        const Matrix p(1, 2, 0.5);
        try {
            cross_entropy(p, std::vector<int>{2});
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::label_out_of_range);
        }
    }
    SUBCASE("non-negative, zero only for certain truth") {
        std::mt19937_64 rng(4);
        for (int i = 0; i < 100; ++i) {
            const Matrix p = softmax_probs(fedssd::testing::random_matrix(4, 5, rng, 3.0));
            const auto batch = random_batch(4, 1, 5, rng);
            CHECK(cross_entropy(p, batch.labels) > 0.0);
        }
    }
}

TEST_CASE("backward: zero distillation weight leaves the CE gradient bitwise unchanged") {
    std::mt19937_64 rng(21);
    const auto p = random_model(4, {6}, 3, rng);
    const auto batch = random_batch(10, 4, 3, rng);
    const CompositeLossSpec ce;
    const ModelParams g_ce = backward(p, batch, ce);

    auto spec = fedssd::testing::random_spec(LossMode::ssd, p, rng);
    SUBCASE("all class weights zero, M_max positive") {
        spec.class_weights.assign(3, 0.0);
        CHECK(backward(p, batch, spec) == g_ce);
    }
    SUBCASE("M_max zero") {
        spec.coefficient = 0.0;
        CHECK(backward(p, batch, spec) == g_ce);
    }
}

TEST_CASE("backward: CE-only gradient matches central differences") {
    std::mt19937_64 rng(31);
    const auto p = random_model(4, {8}, 3, rng);
    const auto batch = random_batch(12, 4, 3, rng);
    const CompositeLossSpec ce;
    const auto check = fedssd::testing::check_gradient(p, batch, ce, backward(p, batch, ce));
    CHECK(check.checked > 0);
    CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("backward: composite losses match central differences") {
    std::mt19937_64 rng(41);
    for (LossMode mode : {LossMode::ssd, LossMode::kl_const, LossMode::mse_const, LossMode::prox}) {
        CAPTURE(to_string(mode));
        for (int trial = 0; trial < 3; ++trial) {
            const auto p = random_model(4, {6, 5}, 3, rng);
            const auto batch = random_batch(9, 4, 3, rng);
            const auto spec = fedssd::testing::random_spec(mode, p, rng);
            const auto check = fedssd::testing::check_gradient(p, batch, spec, backward(p, batch, spec));
            CHECK(check.checked > p.parameter_count() / 2);
            CHECK(check.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("backward: distillation without a teacher is an error") {
    std::mt19937_64 rng(2);
    const auto p = random_model(3, {4}, 2, rng);
    const auto batch = random_batch(3, 3, 2, rng);
    for (LossMode mode : {LossMode::ssd, LossMode::kl_const, LossMode::mse_const, LossMode::prox}) {
        CompositeLossSpec spec;
        spec.mode = mode;
        spec.coefficient = 0.1;
        spec.class_weights.assign(2, 1.0);
        try {
            backward(p, batch, spec);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::missing_teacher);
        }
    }
}

TEST_CASE("sgd_step") {
    const auto scalar = [](double v) {
        return ModelParams({DenseLayer{Matrix(1, 1, {v}), {0.0}}});
    };
    SUBCASE("zero gradient and velocity leave params unchanged") {
        std::mt19937_64 rng(1);
        const auto p = random_model(3, {4}, 2, rng);
        const auto [next, state] = sgd_step(p, zeros_like(p), OptimizerState::fresh(p, 0.01, 0.9));
        CHECK(next == p);
    }
    SUBCASE("plain SGD arithmetic") {
        const auto p = scalar(1.0);
        auto g = scalar(1.0);
        const auto [next, state] = sgd_step(p, g, OptimizerState::fresh(p, 0.1, 0.0));
        CHECK(next.layers()[0].weight(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
    }
    SUBCASE("two momentum steps match the hand-unrolled recurrence") {
        const double w0 = 2.0, g1 = 0.5, g2 = -1.5, lr = 0.05, m = 0.9;
        const auto p0 = scalar(w0);
        const auto [p1, s1] = sgd_step(p0, scalar(g1), OptimizerState::fresh(p0, lr, m));
        const auto [p2, s2] = sgd_step(p1, scalar(g2), s1);
        const double v1 = g1;
        const double w1 = w0 - lr * v1;
        const double v2 = m * v1 + g2;
        const double w2 = w1 - lr * v2;
        CHECK(p1.layers()[0].weight(0, 0) == doctest::Approx(w1).epsilon(1e-15));
        CHECK(p2.layers()[0].weight(0, 0) == doctest::Approx(w2).epsilon(1e-15));
        CHECK(s2.velocity.layers()[0].weight(0, 0) == doctest::Approx(v2).epsilon(1e-15));
    }
    SUBCASE("zero learning rate is the identity") {
        std::mt19937_64 rng(8);
        for (int i = 0; i < 10; ++i) {
            const auto p = random_model(3, {4}, 2, rng);
            const auto g = random_model(3, {4}, 2, rng);
            OptimizerState st = OptimizerState::fresh(p, 0.0, 0.9);
            st.velocity = random_model(3, {4}, 2, rng);
            CHECK(sgd_step(p, g, st).first == p);
        }
    }
    SUBCASE("shape mismatch") {
        std::mt19937_64 rng(8);
        const auto p = random_model(3, {4}, 2, rng);
        const auto q = random_model(3, {5}, 2, rng);
        CHECK_THROWS_AS(sgd_step(p, q, OptimizerState::fresh(p, 0.1, 0.9)), Error);
    }
}

TEST_CASE("init_mlp is seeded and bounded") {
    const std::vector<std::size_t> hidden{64, 32};
    const auto a = init_mlp(20, hidden, 10, 7);
    const auto b = init_mlp(20, hidden, 10, 7);
    CHECK(a == b);
    CHECK(a != init_mlp(20, hidden, 10, 8));
    CHECK(a.parameter_count() == 20 * 64 + 64 + 64 * 32 + 32 + 32 * 10 + 10);
    const double s0 = std::sqrt(6.0 / (20 + 64));
    for (double w : a.layers()[0].weight.values()) CHECK(std::abs(w) <= s0);
    CHECK_NOTHROW(a.validate());
}
