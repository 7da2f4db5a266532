#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "jmfuse/errors.hpp"
#include "jmfuse/jacobian.hpp"
#include "jmfuse/rng.hpp"
#include "jmfuse/volume.hpp"

using namespace jmfuse;

namespace {

// u(x) = A x for a 3x3 matrix A (row-major), displacement convention
Volume linear_field(int64_t n, const double a[9]) {
    Volume f = make_volume(3, n, n, n);
    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                const double p[3] = {static_cast<double>(x), static_cast<double>(y),
                                     static_cast<double>(z)};
                for (int64_t r = 0; r < 3; ++r)
                    f.at(r, z, y, x) = a[3 * r + 0] * p[0] + a[3 * r + 1] * p[1] + a[3 * r + 2] * p[2];
            }
    return f;
}

double det3(const double m[9]) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

} // namespace

TEST_CASE("zero displacement gives the identity gradient everywhere") {
    Volume f = make_volume(3, 5, 5, 5);
    Volume j = jacobian_matrix_field(f, FieldConvention::displacement);
    REQUIRE(j.channels == 9);
    for (int64_t z = 0; z < 5; ++z)
        for (int64_t y = 0; y < 5; ++y)
            for (int64_t x = 0; x < 5; ++x)
                for (int64_t r = 0; r < 3; ++r)
                    for (int64_t c = 0; c < 3; ++c)
                        CHECK(j.at(3 * r + c, z, y, x) == (r == c ? 1.0 : 0.0));
    Volume d = determinant_map(j);
    for (double v : d.data) CHECK(v == 1.0);
}

TEST_CASE("uniform dilation 0.1 gives det 1.331 exactly at interior and boundary") {
    const double a[9] = {0.1, 0, 0, 0, 0.1, 0, 0, 0, 0.1};
    Volume f = linear_field(6, a);
    Volume d = determinant_map(jacobian_matrix_field(f, FieldConvention::displacement));
    // central and one-sided differences are both exact on linear fields
    for (double v : d.data) CHECK(v == doctest::Approx(1.331).epsilon(1e-12));
}

TEST_CASE("uniform contraction -0.2 maps to the documented folded log value") {
    const double a[9] = {-0.2, 0, 0, 0, -0.2, 0, 0, 0, -0.2};
    Volume f = linear_field(6, a);
    ClampStats stats;
    JsmOptions opts;
    Volume m = jsm_pipeline(f, opts, &stats);
    CHECK(stats.clamped == 0);
    // det = 0.8^3 = 0.512, folded log = -ln(0.512) = 3 ln(1.25) = 0.669431...
    const double expect = 3.0 * std::log(1.25);
    CHECK(std::abs(expect - 0.669431) < 5e-7); // documented 6-decimal value
    for (double v : m.data) CHECK(v == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("dilation 0.1 log map value") {
    const double a[9] = {0.1, 0, 0, 0, 0.1, 0, 0, 0, 0.1};
    Volume f = linear_field(5, a);
    Volume m = jsm_pipeline(f, JsmOptions{});
    const double expect = 3.0 * std::log(1.1); // 0.285931...
    CHECK(std::abs(expect - 0.285931) < 5e-7);
    for (double v : m.data) CHECK(v == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("pure shear keeps det 1 and shows up off-diagonal") {
    const double a[9] = {0, 0.05, 0, 0, 0, 0, 0, 0, 0};
    Volume f = linear_field(5, a);
    Volume j = jacobian_matrix_field(f, FieldConvention::displacement);
    for (int64_t z = 0; z < 5; ++z)
        for (int64_t y = 0; y < 5; ++y)
            for (int64_t x = 0; x < 5; ++x) {
                CHECK(j.at(1, z, y, x) == doctest::Approx(0.05).epsilon(1e-12)); // du0/dy
                CHECK(j.at(3, z, y, x) == doctest::Approx(0.0).epsilon(1e-12));
            }
    Volume d = determinant_map(j);
    for (double v : d.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    // det 1 -> log map exactly zero
    Volume m = jsm_pipeline(f, JsmOptions{});
    for (double v : m.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("random affine displacements match det(I + A) analytically") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        double a[9];
        for (auto& v : a) v = rng.uniform(-0.2, 0.2);
        Volume f = linear_field(5, a);
        Volume d = determinant_map(jacobian_matrix_field(f, FieldConvention::displacement));
        double m[9];
        for (int i = 0; i < 9; ++i) m[i] = a[i] + (i % 4 == 0 ? 1.0 : 0.0);
        const double expect = det3(m);
        for (double v : d.data) CHECK(v == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("total-map convention differs from displacement by the identity") {
    const double a[9] = {1.1, 0, 0, 0, 1.0, 0, 0, 0, 0.9}; // the map itself, v(x) = A x
    Volume f = linear_field(5, a);
    Volume d = determinant_map(jacobian_matrix_field(f, FieldConvention::total_map));
    for (double v : d.data) CHECK(v == doctest::Approx(1.1 * 1.0 * 0.9).epsilon(1e-10));
}

TEST_CASE("folded log treats d and 1/d identically") {
    SplitMix64 rng(5);
    Volume d = make_volume(1, 4, 4, 4);
    Volume dinv = make_volume(1, 4, 4, 4);
    for (int64_t i = 0; i < d.numel(); ++i) {
        const double v = rng.uniform(0.1, 10.0);
        d.data[static_cast<size_t>(i)] = v;
        dinv.data[static_cast<size_t>(i)] = 1.0 / v;
    }
    Volume a = log_jacobian_map(d, LogMapOptions{});
    Volume b = log_jacobian_map(dinv, LogMapOptions{});
    for (int64_t i = 0; i < d.numel(); ++i) {
        CHECK(a.data[static_cast<size_t>(i)] >= 0.0);
        CHECK(a.data[static_cast<size_t>(i)] ==
              doctest::Approx(b.data[static_cast<size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("non-positive determinants clamp and are counted") {
    Volume d = make_volume(1, 2, 2, 2);
    d.data = {1.0, 0.5, -0.3, 0.0, 2.0, 1e-9, 1.0, 1.0};
    ClampStats stats;
    Volume m = log_jacobian_map(d, LogMapOptions{}, &stats);
    CHECK(stats.clamped == 3); // -0.3, 0.0, 1e-9 all below eps
    for (double v : m.data) CHECK(std::isfinite(v));
    // clamped voxels land at the eps value: -ln(1e-6)
    CHECK(m.data[2] == doctest::Approx(-std::log(1e-6)).epsilon(1e-12));
    CHECK(m.data[3] == doctest::Approx(-std::log(1e-6)).epsilon(1e-12));
}

TEST_CASE("signed log keeps contraction negative") {
    Volume d = make_volume(1, 2, 2, 2);
    d.data = {0.5, 2.0, 1.0, 0.25, 4.0, 1.0, 1.0, 1.0};
    LogMapOptions opts;
    opts.signed_log = true;
    Volume m = log_jacobian_map(d, opts);
    CHECK(m.data[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    CHECK(m.data[1] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(m.data[2] == 0.0);
    CHECK(m.data[3] == doctest::Approx(std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("pipeline is deterministic bitwise") {
    SplitMix64 rng(9);
    Volume f = make_volume(3, 6, 6, 6);
    for (auto& v : f.data) v = rng.uniform(-0.3, 0.3);
    Volume a = jsm_pipeline(f, JsmOptions{});
    Volume b = jsm_pipeline(f, JsmOptions{});
    CHECK(a.data == b.data);
}

TEST_CASE("input validation") {
    Volume small = make_volume(3, 2, 5, 5); // too thin for central differences
    CHECK_THROWS_AS(jacobian_matrix_field(small, FieldConvention::displacement), DimensionError);
    Volume two = make_volume(2, 5, 5, 5);
    CHECK_THROWS_AS(jacobian_matrix_field(two, FieldConvention::displacement), ValidationError);
    Volume notjac = make_volume(3, 5, 5, 5);
    CHECK_THROWS_AS(determinant_map(notjac), ValidationError);
    Volume d = make_volume(1, 2, 2, 2);
    LogMapOptions bad;
    bad.eps = 0.0;
    CHECK_THROWS_AS(log_jacobian_map(d, bad), ValidationError);
}
