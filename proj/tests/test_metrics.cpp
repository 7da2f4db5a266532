#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "jmfuse/errors.hpp"
#include "jmfuse/metrics.hpp"
#include "jmfuse/rng.hpp"
#include "jmfuse/tensor.hpp"
#include "oracles.hpp"

using namespace jmfuse;

TEST_CASE("the documented hand-computable auc") {
    // scores .1 .4 .35 .8, labels 0 0 1 1: one discordant pair out of four
    std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    std::vector<int> y{0, 0, 1, 1};
    CHECK(roc_auc(s, y) == 0.75);
}

TEST_CASE("perfect, inverted, and all-tied scores") {
    std::vector<int> y{0, 0, 1, 1};
    CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, y) == 1.0);
    CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, y) == 0.0);
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, y) == 0.5);
}

TEST_CASE("ties get half credit") {
    // pos at 0.5 ties one neg, beats the other
    CHECK(roc_auc({0.5, 0.2, 0.5}, {0, 0, 1}) == 0.75);
}

TEST_CASE("auc agrees bitwise with pair counting on tie-heavy random sets") {
    SplitMix64 rng(1234);
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = 2 + rng.below(60);
        std::vector<double> s(n);
        std::vector<int> y(n);
        // coarse grid of score values forces plenty of exact ties
        const int levels = 2 + static_cast<int>(rng.below(8));
        for (size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(static_cast<uint64_t>(levels))) /
                   static_cast<double>(levels);
            y[i] = static_cast<int>(rng.below(2));
        }
        bool has0 = std::count(y.begin(), y.end(), 0) > 0;
        bool has1 = std::count(y.begin(), y.end(), 1) > 0;
        if (!has0 || !has1) {
            CHECK_THROWS_AS(roc_auc(s, y), ValidationError);
            continue;
        }
        CHECK(roc_auc(s, y) == oracles::auc_pair_count(s, y));
    }
}

TEST_CASE("flipping labels complements the auc") {
    SplitMix64 rng(99);
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (size_t i = 0; i < 40; ++i) {
        s[i] = rng.uniform(0.0, 1.0);
        y[i] = i < 15 ? 1 : 0;
    }
    std::vector<int> flipped(y);
    for (auto& v : flipped) v = 1 - v;
    CHECK(roc_auc(s, y) == doctest::Approx(1.0 - roc_auc(s, flipped)).epsilon(1e-12));
}

TEST_CASE("auc is invariant under monotone score transforms") {
    SplitMix64 rng(7);
    std::vector<double> s(30);
    std::vector<int> y(30);
    for (size_t i = 0; i < 30; ++i) {
        s[i] = rng.uniform(-3.0, 3.0);
        y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    std::vector<double> t(s);
    for (auto& v : t) v = 1.0 / (1.0 + std::exp(-v)); // strictly increasing
    CHECK(roc_auc(s, y) == roc_auc(t, y));
}

TEST_CASE("auc input validation") {
    CHECK_THROWS_AS(roc_auc({0.5}, {0, 1}), ValidationError);
    CHECK_THROWS_AS(roc_auc({0.5, 0.6}, {0, 2}), ValidationError);
    CHECK_THROWS_AS(roc_auc({0.5, 0.6}, {1, 1}), ValidationError);
}

TEST_CASE("parameter counting sums tensor sizes") {
    CHECK(count_parameters({}) == 0);
    std::vector<Tensor> params{Tensor::zeros({128, 64}), Tensor::zeros({64}),
                               Tensor::zeros({64, 2}), Tensor::zeros({2})};
    CHECK(count_parameters(params) == 128 * 64 + 64 + 64 * 2 + 2);
}
