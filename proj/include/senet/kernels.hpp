// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

namespace senet::kernels {

// Arithmetic inner loops behind the engine. Each kernel exists in a scalar
// reference form and, on x86 with AVX2, a vectorized form. The scalar form is
// the default: it fixes one canonical reduction order so results reproduce
// bit-for-bit across machines. The AVX2 form is an opt-in fast mode
// (SENET_KERNEL=avx2|auto); its reductions use 8-lane accumulators, so dot
// products may differ from scalar in the last bits. Elementwise kernels are
// bit-identical across backends; the equivalence suite pins both contracts.

enum class Backend {
    Scalar,
    Avx2,
};

const char* backend_name(Backend b);
bool avx2_supported();

/// Currently active backend (process-wide).
Backend active_backend();
void set_backend(Backend b);

/// Resolve "scalar" | "avx2" | "auto". "auto" picks the best supported
/// backend. Throws ValidationError on unknown names or unsupported "avx2".
Backend resolve_backend(const char* name);

/// Apply SENET_KERNEL from the environment if set; otherwise leaves the
/// default (scalar) in place. Called once from main().
void init_backend_from_env();

// --- reduction kernels (backend-specific accumulation order) ---

/// Dot product of two contiguous spans.
float dot(const float* a, const float* b, std::size_t n);

/// out[m*n_rows + n] = dot(a_m, b_n) for row-major A (m_rows x k), B (n_rows x k).
void matmul_nt(const float* a, std::size_t m_rows, const float* b, std::size_t n_rows,
               std::size_t k, float* out);

// --- elementwise kernels (bit-identical across backends) ---

/// y[i] += alpha * x[i]
void axpy(std::size_t n, float alpha, const float* x, float* y);

/// y[i] = mask[i] ? max(0, x[i]) : x[i]
void masked_relu_fwd(std::size_t n, const float* x, const std::uint8_t* mask, float* y);

/// dx[i] += dy[i] * (mask[i] ? (x[i] > 0) : 1)
void masked_relu_bwd(std::size_t n, const float* x, const std::uint8_t* mask,
                     const float* dy, float* dx);

/// v = mu*v + (g + wd*theta); theta -= lr*v
void sgd_update(std::size_t n, float* theta, const float* grad, float* velocity,
                float lr, float mu, float wd);

// Per-backend entry points, exposed for the equivalence tests.
namespace scalar {
float dot(const float* a, const float* b, std::size_t n);
void matmul_nt(const float* a, std::size_t m_rows, const float* b, std::size_t n_rows,
               std::size_t k, float* out);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void masked_relu_fwd(std::size_t n, const float* x, const std::uint8_t* mask, float* y);
void masked_relu_bwd(std::size_t n, const float* x, const std::uint8_t* mask,
                     const float* dy, float* dx);
void sgd_update(std::size_t n, float* theta, const float* grad, float* velocity,
                float lr, float mu, float wd);
} // namespace scalar

#if defined(SENET_HAVE_AVX2)
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
void matmul_nt(const float* a, std::size_t m_rows, const float* b, std::size_t n_rows,
               std::size_t k, float* out);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void masked_relu_fwd(std::size_t n, const float* x, const std::uint8_t* mask, float* y);
void masked_relu_bwd(std::size_t n, const float* x, const std::uint8_t* mask,
                     const float* dy, float* dx);
void sgd_update(std::size_t n, float* theta, const float* grad, float* velocity,
                float lr, float mu, float wd);
} // namespace avx2
#endif

} // namespace senet::kernels
