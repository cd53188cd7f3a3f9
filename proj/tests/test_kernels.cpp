// SPDX-License-Identifier: Apache-2.0
// Backend equivalence: elementwise kernels must match the scalar reference
// bit-for-bit; reductions within a relative tolerance (their lane order
// differs by design).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "senet/common.hpp"
#include "senet/kernels.hpp"
#include "senet/rng.hpp"

using namespace senet;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng, float lo = -2.0f, float hi = 2.0f) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.next_uniform(lo, hi);
    return v;
}

std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng) {
    std::vector<std::uint8_t> m(n);
    for (auto& b : m) b = static_cast<std::uint8_t>(rng.next_below(2));
    return m;
}

// Sizes chosen to hit the vector body, the 32-wide unrolled body, and tails.
const std::size_t kSizes[] = {1, 3, 7, 8, 9, 31, 32, 33, 63, 100, 257, 1024};

} // namespace

TEST_CASE("scalar dot matches a double-precision reference") {
    Rng rng(42);
    for (std::size_t n : kSizes) {
        auto a = random_vec(n, rng);
        auto b = random_vec(n, rng);
        double ref = 0.0;
        for (std::size_t i = 0; i < n; ++i) ref += static_cast<double>(a[i]) * b[i];
        CHECK(kernels::scalar::dot(a.data(), b.data(), n) ==
              doctest::Approx(ref).epsilon(1e-6));
    }
}

#if defined(SENET_HAVE_AVX2)

TEST_CASE("avx2 reductions agree with scalar within tolerance") {
    if (!kernels::avx2_supported()) return;
    Rng rng(7);
    for (std::size_t n : kSizes) {
        for (int rep = 0; rep < 8; ++rep) {
            auto a = random_vec(n, rng);
            auto b = random_vec(n, rng);
            const float s = kernels::scalar::dot(a.data(), b.data(), n);
            const float v = kernels::avx2::dot(a.data(), b.data(), n);
            const float scale = std::max({std::abs(s), std::abs(v), 1.0f});
            CHECK(std::abs(s - v) <= 1e-5f * scale);
        }
    }
}

TEST_CASE("avx2 matmul_nt agrees with scalar within tolerance") {
    if (!kernels::avx2_supported()) return;
    Rng rng(11);
    const std::size_t m = 5, n = 7, k = 129;
    auto a = random_vec(m * k, rng);
    auto b = random_vec(n * k, rng);
    std::vector<float> out_s(m * n), out_v(m * n);
    kernels::scalar::matmul_nt(a.data(), m, b.data(), n, k, out_s.data());
    kernels::avx2::matmul_nt(a.data(), m, b.data(), n, k, out_v.data());
    for (std::size_t i = 0; i < m * n; ++i) {
        CHECK(std::abs(out_s[i] - out_v[i]) <= 1e-5f * std::max(1.0f, std::abs(out_s[i])));
    }
}

TEST_CASE("avx2 elementwise kernels are bit-identical to scalar") {
    if (!kernels::avx2_supported()) return;
    Rng rng(13);
    for (std::size_t n : kSizes) {
        auto x = random_vec(n, rng);
        auto mask = random_mask(n, rng);
        // a few exact zeros and negative zeros to pin the boundary behavior
        if (n >= 4) {
            x[0] = 0.0f;
            x[1] = -0.0f;
            x[2] = -1.5f;
            x[3] = 1.5f;
        }

        std::vector<float> ys(n), yv(n);
        kernels::scalar::masked_relu_fwd(n, x.data(), mask.data(), ys.data());
        kernels::avx2::masked_relu_fwd(n, x.data(), mask.data(), yv.data());
        CHECK(std::memcmp(ys.data(), yv.data(), n * sizeof(float)) == 0);

        auto dy = random_vec(n, rng);
        auto dxs = random_vec(n, rng);
        auto dxv = dxs;
        kernels::scalar::masked_relu_bwd(n, x.data(), mask.data(), dy.data(), dxs.data());
        kernels::avx2::masked_relu_bwd(n, x.data(), mask.data(), dy.data(), dxv.data());
        CHECK(std::memcmp(dxs.data(), dxv.data(), n * sizeof(float)) == 0);

        auto y1 = random_vec(n, rng);
        auto y2 = y1;
        kernels::scalar::axpy(n, 0.37f, x.data(), y1.data());
        kernels::avx2::axpy(n, 0.37f, x.data(), y2.data());
        CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(float)) == 0);

        auto th1 = random_vec(n, rng);
        auto th2 = th1;
        auto g = random_vec(n, rng);
        auto v1 = random_vec(n, rng, -0.1f, 0.1f);
        auto v2 = v1;
        kernels::scalar::sgd_update(n, th1.data(), g.data(), v1.data(), 0.05f, 0.9f, 5e-4f);
        kernels::avx2::sgd_update(n, th2.data(), g.data(), v2.data(), 0.05f, 0.9f, 5e-4f);
        CHECK(std::memcmp(th1.data(), th2.data(), n * sizeof(float)) == 0);
        CHECK(std::memcmp(v1.data(), v2.data(), n * sizeof(float)) == 0);
    }
}

#endif // SENET_HAVE_AVX2

TEST_CASE("backend selection") {
    CHECK(kernels::resolve_backend("scalar") == kernels::Backend::Scalar);
    CHECK_THROWS_AS(kernels::resolve_backend("neon"), ValidationError);
    CHECK(kernels::active_backend() == kernels::Backend::Scalar);   // default
    if (kernels::avx2_supported()) {
        CHECK(kernels::resolve_backend("auto") == kernels::Backend::Avx2);
        kernels::set_backend(kernels::Backend::Avx2);
        CHECK(kernels::active_backend() == kernels::Backend::Avx2);
        kernels::set_backend(kernels::Backend::Scalar);
    } else {
        CHECK(kernels::resolve_backend("auto") == kernels::Backend::Scalar);
    }
}
