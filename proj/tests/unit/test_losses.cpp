#include <doctest.h>

#include <cmath>
#include <random>

#include "gemlab/dist.hpp"
#include "gemlab/errors.hpp"
#include "gemlab/flow.hpp"
#include "gemlab/losses.hpp"
#include "../oracles.hpp"

using namespace gemlab;

namespace {

LogitVector log_of(const std::vector<double>& p) {
    std::vector<double> l;
    for (double v : p) l.push_back(std::log(v));
    return LogitVector(l);
}

}  // namespace

TEST_CASE("LossSpec validation and labels") {
    CHECK_NOTHROW(LossSpec::gem(0.0).validate());
    CHECK_NOTHROW(LossSpec::gem(1.0).validate());
    CHECK_THROWS_AS(LossSpec::gem(1.2).validate(), InvalidParameter);
    CHECK_THROWS_AS(LossSpec::gem(-0.1).validate(), InvalidParameter);
    CHECK_THROWS_AS(LossSpec::ce_entropy(-1.0).validate(), InvalidParameter);
    CHECK(LossSpec::ce().label() == "CE");
    CHECK(parse_loss_kind(to_string(LossKind::GEM)) == LossKind::GEM);
    CHECK(parse_h_function(to_string(HFunction::LOG_SIGMOID)) == HFunction::LOG_SIGMOID);
}

TEST_CASE("ce_loss examples") {
    CHECK(ce_loss(LogitVector({30, 0, 0}), 0) < 1e-12);
    CHECK(ce_loss(LogitVector({0, 0, 0, 0}), 3) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(ce_loss(log_of({0.4, 0.3, 0.2, 0.1}), 2) == doctest::Approx(-std::log(0.2)).epsilon(1e-14));
    CHECK(ce_loss(log_of({0.4, 0.3, 0.2, 0.1}), 2) == doctest::Approx(1.60944).epsilon(1e-5));
}

TEST_CASE("ce_entropy_loss examples") {
    const auto l = log_of({0.4, 0.3, 0.2, 0.1});
    CHECK(ce_entropy_loss(l, 1, 0.0) == ce_loss(l, 1));
    CHECK(std::abs(ce_entropy_loss(LogitVector({0, 0, 0, 0}), 1, 1.0)) < 1e-14);
    const double want = -std::log(0.2) - 0.5 * oracle::entropy({0.8, 0.2});
    CHECK(ce_entropy_loss(log_of({0.8, 0.2}), 1, 0.5) == doctest::Approx(want).epsilon(1e-14));
    CHECK(want == doctest::Approx(1.35924).epsilon(1e-5));
}

TEST_CASE("gem_q examples") {
    const auto l = log_of({0.4, 0.3, 0.2, 0.1});
    CHECK(gem_q(l, 1.0) == softmax(l));
    CHECK(gem_q(l, 0.0).vec() == std::vector<double>{1, 0, 0, 0});
    CHECK(oracle::max_abs_diff(gem_q(l, 0.5).vec(), oracle::power({0.4, 0.3, 0.2, 0.1}, 2.0)) < 1e-14);
    CHECK_THROWS_AS(gem_q(l, 1.5), InvalidParameter);
}

TEST_CASE("gem_loss and gem_gradient hand examples") {
    // beta = 1 makes q = f = [0.5, 0.3, 0.2]; target is the second token
    const auto l = log_of({0.5, 0.3, 0.2});
    const auto spec = LossSpec::gem(1.0);
    const double want = 0.5 * (std::log(0.5) - std::log(0.3)) + 0.2 * (std::log(0.2) - std::log(0.3));
    CHECK(gem_loss(l, 1, spec) == doctest::Approx(want).epsilon(1e-13));
    CHECK(want == doctest::Approx(0.17429).epsilon(1e-4));
    CHECK(oracle::max_abs_diff(gem_gradient(l, 1, spec), {-0.5, 0.7, -0.2}) < 1e-14);

    CHECK(std::abs(gem_loss(LogitVector({40, 0, 0}), 0, LossSpec::gem(0.7))) < 1e-12);
    CHECK(gem_gradient(LogitVector({3, 1, 0}), 0, LossSpec::gem(0.0)) == std::vector<double>{0, 0, 0});
}

TEST_CASE("property: gem gradient matches the flow oracle and sums to zero") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<std::size_t> kd(2, 16);
    std::uniform_real_distribution<double> bd(0.0, 1.0);
    for (int i = 0; i < 5000; ++i) {
        const std::size_t k = kd(rng);
        const auto x = oracle::random_logits(rng, k);
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
        const double beta = bd(rng);
        const bool ls = i % 2 == 1;
        const auto spec = LossSpec::gem(beta, ls ? HFunction::LOG_SIGMOID : HFunction::LINEAR, 0.01);
        const auto g = gem_gradient(LogitVector(x), t, spec);
        REQUIRE(oracle::max_abs_diff(g, oracle::gem_ascent(x, t, beta, ls, 0.01)) < 1e-13);
        long double s = 0;
        for (double v : g) s += v;
        REQUIRE(std::abs(static_cast<double>(s)) < 1e-12);
        REQUIRE(conservation_residual(decompose_gradient(g, t)) < 1e-12);
    }
}

TEST_CASE("property: beta one reduces gem to ce") {
    std::mt19937_64 rng(32);
    for (int i = 0; i < 10000; ++i) {
        const std::size_t k = 2 + static_cast<std::size_t>(i % 31);
        const auto x = oracle::random_logits(rng, k);
        const std::size_t t = static_cast<std::size_t>(i) % k;
        const auto g = gem_gradient(LogitVector(x), t, LossSpec::gem(1.0));
        REQUIRE(oracle::max_abs_diff(g, ce_gradient(softmax(LogitVector(x)), t)) < 1e-12);
    }
}

TEST_CASE("property: beta zero with target at argmax has no gradient") {
    std::mt19937_64 rng(33);
    for (int i = 0; i < 1000; ++i) {
        const auto x = oracle::random_logits(rng, 7);
        const auto t = argmax_index(x);
        for (double v : gem_gradient(LogitVector(x), t, LossSpec::gem(0.0))) REQUIRE(v == 0.0);
    }
}

TEST_CASE("finite differences agree with analytic gradients") {
    std::mt19937_64 rng(34);
    const LossSpec specs[] = {LossSpec::ce(), LossSpec::ce_entropy(0.1), LossSpec::gem(0.7),
                              LossSpec::gem(0.7, HFunction::LOG_SIGMOID, 0.01)};
    for (const auto& spec : specs) {
        for (int i = 0; i < 200; ++i) {
            const auto x = oracle::random_logits(rng, 8, 2.0);
            const double err = analytic_vs_numeric(LogitVector(x), static_cast<std::size_t>(i % 8), spec, 1e-3);
            REQUIRE(err < 1e-6);
        }
    }
}

TEST_CASE("log-sigmoid weights are in (0,1) and increase with the logit gap") {
    const LogitVector l({-3.0, 0.0, 1.0, 5.0, 50.0});
    const auto w = gem_h_weights(l, 1, LossSpec::gem(0.7, HFunction::LOG_SIGMOID, 0.01));
    for (std::size_t j = 0; j < w.size(); ++j) {
        CHECK(w[j] > 0.0);
        CHECK(w[j] < 1.0);
        if (j > 0) CHECK(w[j] > w[j - 1]);
    }
    CHECK(w[1] == doctest::Approx(0.5));
    const auto lin = gem_h_weights(l, 1, LossSpec::gem(0.7));
    for (double v : lin) CHECK(v == 1.0);
}

TEST_CASE("expected ascent closed forms match the per-target average") {
    std::mt19937_64 rng(35);
    const LossSpec specs[] = {LossSpec::ce(), LossSpec::ce_entropy(0.3), LossSpec::gem(0.6),
                              LossSpec::gem(0.6, HFunction::LOG_SIGMOID, 0.01)};
    for (const auto& spec : specs) {
        for (int i = 0; i < 100; ++i) {
            const auto x = oracle::random_logits(rng, 6);
            const auto p = ProbVector::normalized(oracle::dirichlet(rng, 6, 1.0));
            std::vector<double> avg(6, 0.0);
            double lavg = 0;
            for (std::size_t y = 0; y < 6; ++y) {
                const auto g = loss_ascent(LogitVector(x), y, spec);
                for (std::size_t j = 0; j < 6; ++j) avg[j] += p[y] * g[j];
                lavg += p[y] * loss_value(LogitVector(x), y, spec);
            }
            REQUIRE(oracle::max_abs_diff(expected_ascent(LogitVector(x), p, spec), avg) < 1e-12);
            REQUIRE(expected_loss(LogitVector(x), p, spec) == doctest::Approx(lavg).epsilon(1e-11));
        }
    }
}

TEST_CASE("tail pull on a low-probability token") {
    // j = 1 holds 1e-6, the rest is spread evenly
    std::vector<double> f(4, (1.0 - 1e-6) / 3.0);
    f[1] = 1e-6;
    const auto tp = tail_pull(ProbVector(f), 1, 0.7, 0.1);
    CHECK(tp.entropy_regularizer == doctest::Approx(0.1 * std::abs(1.0 + std::log(1e-6))));
    const auto q = oracle::power(f, 1.0 / 0.7);
    CHECK(tp.gem_ratio == doctest::Approx(q[1] / f[1]).epsilon(1e-10));
    CHECK(tp.entropy_regularizer >= 10.0 * tp.gem_ratio);
}
