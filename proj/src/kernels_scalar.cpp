// SPDX-License-Identifier: Apache-2.0
#include "senet/kernels.hpp"

namespace senet::kernels::scalar {

// Reference reduction: strict left-to-right, double accumulator. This is the
// canonical order every other backend is measured against.
float dot(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return static_cast<float>(acc);
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
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void masked_relu_fwd(std::size_t n, const float* x, const std::uint8_t* mask, float* y) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = (mask[i] && x[i] < 0.0f) ? 0.0f : x[i];
    }
}

void masked_relu_bwd(std::size_t n, const float* x, const std::uint8_t* mask,
                     const float* dy, float* dx) {
    for (std::size_t i = 0; i < n; ++i) {
        dx[i] += (mask[i] && x[i] <= 0.0f) ? 0.0f : dy[i];
    }
}

void sgd_update(std::size_t n, float* theta, const float* grad, float* velocity,
                float lr, float mu, float wd) {
    for (std::size_t i = 0; i < n; ++i) {
        float v = mu * velocity[i] + (grad[i] + wd * theta[i]);
        velocity[i] = v;
        theta[i] -= lr * v;
    }
}

} // namespace senet::kernels::scalar
