#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "jmfuse/errors.hpp"
#include "jmfuse/gradcheck.hpp"
#include "jmfuse/rng.hpp"
#include "jmfuse/tensor.hpp"
#include "oracles.hpp"

using namespace jmfuse;

namespace {

std::vector<double> random_vec(size_t n, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

} // namespace

TEST_CASE("matmul hand values and identities") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{19, 22, 43, 50});

    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    CHECK(matmul(a, eye).data() == a.data());
    CHECK(matmul(eye, a).data() == a.data());

    Tensor z = Tensor::zeros({2, 2});
    CHECK(matmul(a, z).data() == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("matmul agrees with naive oracle on random rectangles") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t m = 1 + static_cast<int64_t>(rng.below(6));
        const int64_t k = 1 + static_cast<int64_t>(rng.below(6));
        const int64_t n = 1 + static_cast<int64_t>(rng.below(6));
        auto av = random_vec(static_cast<size_t>(m * k), rng);
        auto bv = random_vec(static_cast<size_t>(k * n), rng);
        Tensor c = matmul(Tensor::from_data({m, k}, av), Tensor::from_data({k, n}, bv));
        auto ref = oracles::matmul(av, m, k, bv, n);
        for (size_t i = 0; i < ref.size(); ++i)
            CHECK(c.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul rejects mismatched inner dims") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("softmax hand values, shift invariance, row normalization") {
    Tensor x = Tensor::from_data({1, 2}, {0.0, std::log(2.0)});
    Tensor y = softmax_lastdim(x);
    CHECK(y.data()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    SplitMix64 rng(11);
    auto v = random_vec(24, rng, -5.0, 5.0);
    Tensor a = Tensor::from_data({4, 6}, v);
    for (auto& e : v) e += 123.456; // uniform shift per row
    Tensor b = Tensor::from_data({4, 6}, v);
    Tensor sa = softmax_lastdim(a), sb = softmax_lastdim(b);
    for (int64_t i = 0; i < sa.numel(); ++i)
        CHECK(sa.data()[static_cast<size_t>(i)] ==
              doctest::Approx(sb.data()[static_cast<size_t>(i)]).epsilon(1e-12));
    for (int64_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < 6; ++c) s += sa.data()[static_cast<size_t>(r * 6 + c)];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }

    // extreme logits stay finite and normalized
    Tensor big = Tensor::from_data({1, 3}, {1000.0, 999.0, -1000.0});
    Tensor sb2 = softmax_lastdim(big);
    double s = sb2.data()[0] + sb2.data()[1] + sb2.data()[2];
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(std::isfinite(sb2.data()[2]));
}

TEST_CASE("softmax rejects non-finite input") {
    Tensor x = Tensor::from_data({1, 2}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(softmax_lastdim(x), NumericError);
}

TEST_CASE("conv3d delta kernel reproduces the input") {
    SplitMix64 rng(3);
    auto xv = random_vec(2 * 4 * 4 * 4, rng);
    Tensor x = Tensor::from_data({2, 4, 4, 4}, xv);
    // two output channels, each a centered delta on the matching input channel
    std::vector<double> wv(2 * 2 * 27, 0.0);
    wv[0 * 2 * 27 + 0 * 27 + 13] = 1.0;
    wv[1 * 2 * 27 + 1 * 27 + 13] = 1.0;
    Tensor w = Tensor::from_data({2, 2, 3, 3, 3}, wv);
    Tensor b = Tensor::zeros({2});
    Tensor y = conv3d(x, w, b, 1, 1);
    REQUIRE(y.shape() == Shape{2, 4, 4, 4});
    for (size_t i = 0; i < xv.size(); ++i) CHECK(y.data()[i] == doctest::Approx(xv[i]).epsilon(1e-15));
}

TEST_CASE("conv3d all-ones kernel counts the window") {
    Tensor x = Tensor::full({1, 4, 4, 4}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0);
    Tensor b = Tensor::from_data({1}, {0.5});
    Tensor y = conv3d(x, w, b, 1, 1);
    // interior voxel sees all 27 taps, a corner sees 8
    auto at = [&](int64_t z, int64_t yy, int64_t xx) {
        return y.data()[static_cast<size_t>((z * 4 + yy) * 4 + xx)];
    };
    CHECK(at(1, 1, 1) == doctest::Approx(27.5).epsilon(1e-15));
    CHECK(at(0, 0, 0) == doctest::Approx(8.5).epsilon(1e-15));
    CHECK(at(0, 1, 1) == doctest::Approx(18.5).epsilon(1e-15));
}

TEST_CASE("conv3d zero weights yield pure bias") {
    Tensor x = Tensor::full({1, 4, 4, 4}, 3.0);
    Tensor w = Tensor::zeros({2, 1, 3, 3, 3});
    Tensor b = Tensor::from_data({2}, {-1.5, 2.5});
    Tensor y = conv3d(x, w, b, 1, 1);
    for (int64_t i = 0; i < 64; ++i) {
        CHECK(y.data()[static_cast<size_t>(i)] == -1.5);
        CHECK(y.data()[static_cast<size_t>(64 + i)] == 2.5);
    }
}

TEST_CASE("conv3d matches the naive oracle exactly") {
    SplitMix64 rng(17);
    struct Cfg {
        int64_t cin, cout, d, h, w;
        int64_t k;
        int stride, pad;
    };
    const Cfg cfgs[] = {
        {1, 1, 5, 5, 5, 3, 1, 1}, {2, 3, 4, 6, 5, 3, 1, 1}, {3, 2, 7, 5, 6, 3, 2, 1},
        {1, 4, 6, 6, 6, 1, 1, 0}, {2, 2, 5, 5, 5, 5, 1, 2}, {2, 1, 8, 4, 6, 3, 2, 0},
    };
    for (const auto& c : cfgs) {
        auto xv = random_vec(static_cast<size_t>(c.cin * c.d * c.h * c.w), rng);
        auto wv = random_vec(static_cast<size_t>(c.cout * c.cin * c.k * c.k * c.k), rng);
        auto bv = random_vec(static_cast<size_t>(c.cout), rng);
        Tensor y = conv3d(Tensor::from_data({c.cin, c.d, c.h, c.w}, xv),
                          Tensor::from_data({c.cout, c.cin, c.k, c.k, c.k}, wv),
                          Tensor::from_data({c.cout}, bv), c.stride, c.pad);
        auto ref = oracles::conv3d(xv, c.cin, c.d, c.h, c.w, wv, c.cout, c.k, bv, c.stride, c.pad);
        REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
        for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == ref[i]);
    }
}

TEST_CASE("conv3d validates shapes") {
    Tensor x = Tensor::zeros({1, 4, 4, 4});
    CHECK_THROWS_AS(conv3d(x, Tensor::zeros({1, 2, 3, 3, 3}), Tensor::zeros({1}), 1, 1),
                    DimensionError); // channel mismatch
    CHECK_THROWS_AS(conv3d(x, Tensor::zeros({1, 1, 2, 2, 2}), Tensor::zeros({1}), 1, 0),
                    ValidationError); // even kernel
    CHECK_THROWS_AS(conv3d(x, Tensor::zeros({2, 1, 3, 3, 3}), Tensor::zeros({1}), 1, 1),
                    DimensionError); // bias length
    CHECK_THROWS_AS(conv3d(x, Tensor::zeros({1, 1, 5, 5, 5}), Tensor::zeros({1}), 1, 0),
                    ValidationError); // kernel larger than padded input
}

TEST_CASE("maxpool3d picks window maxima and halves extents") {
    std::vector<double> xv(64);
    for (size_t i = 0; i < 64; ++i) xv[i] = static_cast<double>(i);
    Tensor x = Tensor::from_data({1, 4, 4, 4}, xv);
    Tensor y = maxpool3d(x, 2);
    REQUIRE(y.shape() == Shape{1, 2, 2, 2});
    // max of each 2x2x2 block is its last element in scan order
    CHECK(y.data() == std::vector<double>{21, 23, 29, 31, 53, 55, 61, 63});
}

TEST_CASE("maxpool3d requires divisible extents") {
    CHECK_THROWS_AS(maxpool3d(Tensor::zeros({1, 5, 4, 4}), 2), DimensionError);
}

TEST_CASE("relu clamps negatives") {
    Tensor x = Tensor::from_data({5}, {-2.0, -0.5, 0.0, 0.5, 2.0});
    CHECK(relu(x).data() == std::vector<double>{0.0, 0.0, 0.0, 0.5, 2.0});
}

TEST_CASE("channels_to_tokens lays rows out x-fastest") {
    std::vector<double> v(2 * 2 * 2 * 2);
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    Tensor fm = Tensor::from_data({2, 2, 2, 2}, v);
    Tensor t = channels_to_tokens(fm);
    REQUIRE(t.shape() == Shape{8, 2});
    // token 0 = voxel (0,0,0): channel 0 value 0, channel 1 value 8
    CHECK(t.data()[0] == 0.0);
    CHECK(t.data()[1] == 8.0);
    // token 1 = voxel (0,0,1), x fastest
    CHECK(t.data()[2] == 1.0);
    CHECK(t.data()[3] == 9.0);
    // last token = voxel (1,1,1)
    CHECK(t.data()[14] == 7.0);
    CHECK(t.data()[15] == 15.0);
}

TEST_CASE("global_avg_pool averages rows") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 5, 6, 7});
    CHECK(global_avg_pool(t).data() == std::vector<double>{3, 4, 5});
}

TEST_CASE("row concat, slice, and stack round-trip") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({1, 3}, {7, 8, 9});
    Tensor c = concat_rows(a, b);
    REQUIRE(c.shape() == Shape{3, 3});
    CHECK(slice_rows(c, 0, 2).data() == a.data());
    CHECK(slice_rows(c, 2, 3).data() == b.data());
    Tensor s = stack_rows({Tensor::from_data({3}, {1, 2, 3}), Tensor::from_data({3}, {4, 5, 6})});
    CHECK(s.shape() == Shape{2, 3});
    CHECK(s.data() == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("cross_entropy hand values") {
    Tensor even = Tensor::from_data({1, 2}, {0.0, 0.0});
    CHECK(cross_entropy_loss(even, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy_loss(even, {1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor confident = Tensor::from_data({1, 2}, {20.0, -20.0});
    CHECK(cross_entropy_loss(confident, {0}).item() < 1e-12);
    CHECK(cross_entropy_loss(confident, {1}).item() == doctest::Approx(40.0).epsilon(1e-9));

    // batch mean of two symmetric rows
    Tensor batch = Tensor::from_data({2, 2}, {1.0, -1.0, -1.0, 1.0});
    double per = std::log(1.0 + std::exp(-2.0));
    CHECK(cross_entropy_loss(batch, {0, 1}).item() == doctest::Approx(per).epsilon(1e-12));
}

TEST_CASE("cross_entropy validates labels and shape") {
    Tensor x = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(cross_entropy_loss(x, {0}), ValidationError);
    CHECK_THROWS_AS(cross_entropy_loss(x, {0, 2}), ValidationError);
    CHECK_THROWS_AS(cross_entropy_loss(Tensor::zeros({2, 3}), {0, 1}), DimensionError);
}

TEST_CASE("backward of a plain sum is all ones") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    backward(sum(x));
    CHECK(x.grad() == std::vector<double>(6, 1.0));
}

TEST_CASE("backward accumulates through reuse") {
    Tensor x = Tensor::from_data({2}, {3.0, 4.0}, true);
    // loss = sum(x + x) -> d/dx = 2
    backward(sum(add(x, x)));
    CHECK(x.grad() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("unused branches keep zero gradients") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = Tensor::from_data({2}, {5.0, 6.0}, true);
    Tensor dead = mul(y, y); // never feeds the loss
    (void)dead;
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2.0, 4.0});
    CHECK(y.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward requires a scalar and grads are reproducible bitwise") {
    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ValidationError);

    SplitMix64 rng(23);
    auto av = random_vec(12, rng);
    auto bv = random_vec(8, rng);
    std::vector<double> g1, g2;
    for (int rep = 0; rep < 2; ++rep) {
        Tensor a = Tensor::from_data({3, 4}, av, true);
        Tensor b = Tensor::from_data({4, 2}, bv, true);
        backward(sum(relu(matmul(a, b))));
        (rep == 0 ? g1 : g2) = a.grad();
    }
    CHECK(g1 == g2);
}

TEST_CASE("no-grad regions record nothing") {
    Tensor x = Tensor::from_data({2}, {1.0, -1.0}, true);
    {
        NoGradGuard guard;
        Tensor y = relu(x);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    Tensor y = relu(x);
    CHECK(y.requires_grad());
}

TEST_CASE("glorot init respects bounds and seeding") {
    SplitMix64 r1(99), r2(99), r3(100);
    Tensor a = glorot_uniform({8, 4}, 8, 4, r1);
    Tensor b = glorot_uniform({8, 4}, 8, 4, r2);
    Tensor c = glorot_uniform({8, 4}, 8, 4, r3);
    CHECK(a.data() == b.data());
    CHECK(a.data() != c.data());
    CHECK(a.requires_grad());
    const double bound = std::sqrt(6.0 / 12.0);
    for (double v : a.data()) {
        CHECK(v <= bound);
        CHECK(v >= -bound);
    }
}

TEST_CASE("finite differences confirm every op gradient") {
    SplitMix64 rng(31);
    const double tol = 1e-5;

    SUBCASE("matmul and linear") {
        Tensor a = Tensor::from_data({3, 4}, random_vec(12, rng), true);
        Tensor b = Tensor::from_data({4, 2}, random_vec(8, rng), true);
        Tensor w = Tensor::from_data({2, 3}, random_vec(6, rng), true);
        Tensor bias = Tensor::from_data({3}, random_vec(3, rng), true);
        auto loss = [&] {
            Tensor o = linear(matmul(a, b), w, bias);
            return sum(mul(o, o));
        };
        CHECK(max_grad_error(loss, {a, b, w, bias}) < tol);
    }

    SUBCASE("relu away from the kink") {
        auto v = random_vec(10, rng);
        for (auto& x : v)
            if (std::abs(x) < 0.05) x = 0.1; // keep clear of 0
        Tensor x = Tensor::from_data({10}, v, true);
        auto loss = [&] { return sum(mul(relu(x), relu(x))); };
        CHECK(max_grad_error(loss, {x}) < tol);
    }

    SUBCASE("softmax") {
        Tensor x = Tensor::from_data({3, 5}, random_vec(15, rng, -2, 2), true);
        Tensor w = Tensor::from_data({3, 5}, random_vec(15, rng));
        auto loss = [&] { return sum(mul(softmax_lastdim(x), w)); };
        CHECK(max_grad_error(loss, {x}) < tol);
    }

    SUBCASE("conv3d strided") {
        Tensor x = Tensor::from_data({2, 5, 5, 5}, random_vec(250, rng), true);
        Tensor w = Tensor::from_data({3, 2, 3, 3, 3}, random_vec(162, rng, -0.3, 0.3), true);
        Tensor b = Tensor::from_data({3}, random_vec(3, rng), true);
        Tensor mask = Tensor::from_data({3, 3, 3, 3}, random_vec(81, rng));
        auto loss = [&] { return sum(mul(conv3d(x, w, b, 2, 1), mask)); };
        CHECK(max_grad_error(loss, {x, w, b}) < tol);
    }

    SUBCASE("maxpool away from ties") {
        auto v = random_vec(64, rng, 0.0, 100.0);
        Tensor x = Tensor::from_data({1, 4, 4, 4}, v, true);
        auto loss = [&] { return sum(mul(maxpool3d(x, 2), maxpool3d(x, 2))); };
        CHECK(max_grad_error(loss, {x}) < tol);
    }

    SUBCASE("pooling and reshaping chain") {
        Tensor fm = Tensor::from_data({4, 2, 2, 2}, random_vec(32, rng), true);
        Tensor w = Tensor::from_data({4}, random_vec(4, rng));
        auto loss = [&] {
            Tensor pooled = global_avg_pool(channels_to_tokens(fm));
            return sum(mul(pooled, w));
        };
        CHECK(max_grad_error(loss, {fm}) < tol);
    }

    SUBCASE("concat, slice, stack") {
        Tensor a = Tensor::from_data({2, 3}, random_vec(6, rng), true);
        Tensor b = Tensor::from_data({2, 3}, random_vec(6, rng), true);
        Tensor r1 = Tensor::from_data({3}, random_vec(3, rng), true);
        Tensor r2 = Tensor::from_data({3}, random_vec(3, rng), true);
        Tensor w = Tensor::from_data({2, 3}, random_vec(6, rng));
        auto loss = [&] {
            Tensor cat = concat_rows(a, b);
            Tensor mid = slice_rows(cat, 1, 3);
            Tensor st = stack_rows({r1, r2});
            return sum(mul(mid, mul(st, w)));
        };
        CHECK(max_grad_error(loss, {a, b, r1, r2}) < tol);
    }

    SUBCASE("scaled dot attention") {
        Tensor q = Tensor::from_data({3, 4}, random_vec(12, rng), true);
        Tensor k = Tensor::from_data({5, 4}, random_vec(20, rng), true);
        Tensor v = Tensor::from_data({5, 4}, random_vec(20, rng), true);
        Tensor w = Tensor::from_data({3, 4}, random_vec(12, rng));
        for (int heads : {1, 2}) {
            auto loss = [&] { return sum(mul(scaled_dot_attention(q, k, v, heads), w)); };
            CHECK(max_grad_error(loss, {q, k, v}) < tol);
        }
    }

    SUBCASE("cross entropy") {
        Tensor logits = Tensor::from_data({4, 2}, random_vec(8, rng, -2, 2), true);
        auto loss = [&] { return cross_entropy_loss(logits, {0, 1, 1, 0}); };
        CHECK(max_grad_error(loss, {logits}) < tol);
    }
}

TEST_CASE("gradcheck suite stays under the gate") {
    auto entries = run_gradcheck_suite();
    REQUIRE(!entries.empty());
    for (const auto& e : entries) {
        INFO(e.name);
        CHECK(e.max_rel_err < 1e-5);
    }
}
