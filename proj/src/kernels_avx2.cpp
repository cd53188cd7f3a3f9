// SPDX-License-Identifier: Apache-2.0
// AVX2/FMA variants. Compiled with -mavx2 -mfma; only reachable after the
// runtime CPU check in kernels.cpp. Reductions keep a fixed lane/tree order,
// so results are reproducible run-to-run but may differ from the scalar
// reference in the last bits. Elementwise kernels use mul+add (no contraction)
// in the same order as the scalar reference and must match it bit-for-bit.
#include "senet/kernels.hpp"

#if defined(SENET_HAVE_AVX2)

#include <immintrin.h>

#include <cstring>

namespace senet::kernels::avx2 {

namespace {
inline __m256 mask_lanes(const std::uint8_t* mask) {
    std::uint64_t packed;
    std::memcpy(&packed, mask, sizeof(packed));
    __m128i mb = _mm_cvtsi64_si128(static_cast<long long>(packed));
    __m256i mi = _mm256_cvtepu8_epi32(mb);
    return _mm256_castsi256_ps(_mm256_cmpgt_epi32(mi, _mm256_setzero_si256()));
}

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_add_ps(s, _mm_movehl_ps(s, s));
    s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
    return _mm_cvtss_f32(s);
}
} // namespace

float dot(const float* a, const float* b, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    __m256 acc2 = _mm256_setzero_ps();
    __m256 acc3 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
        acc2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 16), _mm256_loadu_ps(b + i + 16), acc2);
        acc3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 24), _mm256_loadu_ps(b + i + 24), acc3);
    }
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    }
    float sum = hsum8(_mm256_add_ps(_mm256_add_ps(acc0, acc1), _mm256_add_ps(acc2, acc3)));
    for (; i < n; ++i) {
        sum += a[i] * b[i];
    }
    return sum;
}

void matmul_nt(const float* a, std::size_t m_rows, const float* b, std::size_t n_rows,
               std::size_t k, float* out) {
    for (std::size_t m = 0; m < m_rows; ++m) {
        const float* arow = a + m * k;
        float* orow = out + m * n_rows;
        for (std::size_t n = 0; n < n_rows; ++n) {
            orow[n] = dot(arow, b + n * k, k);
        }
    }
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) {
        float p = alpha * x[i];
        y[i] = y[i] + p;
    }
}

void masked_relu_fwd(std::size_t n, const float* x, const std::uint8_t* mask, float* y) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vx = _mm256_loadu_ps(x + i);
        __m256 clamp = _mm256_and_ps(mask_lanes(mask + i), _mm256_cmp_ps(vx, zero, _CMP_LT_OQ));
        _mm256_storeu_ps(y + i, _mm256_blendv_ps(vx, zero, clamp));
    }
    for (; i < n; ++i) {
        y[i] = (mask[i] && x[i] < 0.0f) ? 0.0f : x[i];
    }
}

void masked_relu_bwd(std::size_t n, const float* x, const std::uint8_t* mask,
                     const float* dy, float* dx) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 active = mask_lanes(mask + i);
        __m256 pos = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        // gate = !active || pos
        __m256 gate = _mm256_or_ps(_mm256_andnot_ps(active, _mm256_castsi256_ps(_mm256_set1_epi32(-1))), pos);
        __m256 grad = _mm256_and_ps(_mm256_loadu_ps(dy + i), gate);
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), grad));
    }
    for (; i < n; ++i) {
        dx[i] += (mask[i] && x[i] <= 0.0f) ? 0.0f : dy[i];
    }
}

void sgd_update(std::size_t n, float* theta, const float* grad, float* velocity,
                float lr, float mu, float wd) {
    const __m256 vmu = _mm256_set1_ps(mu);
    const __m256 vwd = _mm256_set1_ps(wd);
    const __m256 vlr = _mm256_set1_ps(lr);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 th = _mm256_loadu_ps(theta + i);
        __m256 g = _mm256_add_ps(_mm256_loadu_ps(grad + i), _mm256_mul_ps(vwd, th));
        __m256 v = _mm256_add_ps(_mm256_mul_ps(vmu, _mm256_loadu_ps(velocity + i)), g);
        _mm256_storeu_ps(velocity + i, v);
        _mm256_storeu_ps(theta + i, _mm256_sub_ps(th, _mm256_mul_ps(vlr, v)));
    }
    for (; i < n; ++i) {
        float v = mu * velocity[i] + (grad[i] + wd * theta[i]);
        velocity[i] = v;
        theta[i] -= lr * v;
    }
}

} // namespace senet::kernels::avx2

#endif // SENET_HAVE_AVX2
