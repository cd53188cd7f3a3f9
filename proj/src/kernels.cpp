// SPDX-License-Identifier: Apache-2.0
#include "senet/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "senet/common.hpp"

namespace senet::kernels {

namespace {

struct Table {
    float (*dot)(const float*, const float*, std::size_t);
    void (*matmul_nt)(const float*, std::size_t, const float*, std::size_t, std::size_t, float*);
    void (*axpy)(std::size_t, float, const float*, float*);
    void (*masked_relu_fwd)(std::size_t, const float*, const std::uint8_t*, float*);
    void (*masked_relu_bwd)(std::size_t, const float*, const std::uint8_t*, const float*, float*);
    void (*sgd_update)(std::size_t, float*, const float*, float*, float, float, float);
};

constexpr Table kScalarTable = {
    scalar::dot, scalar::matmul_nt, scalar::axpy,
    scalar::masked_relu_fwd, scalar::masked_relu_bwd, scalar::sgd_update,
};

#if defined(SENET_HAVE_AVX2)
constexpr Table kAvx2Table = {
    avx2::dot, avx2::matmul_nt, avx2::axpy,
    avx2::masked_relu_fwd, avx2::masked_relu_bwd, avx2::sgd_update,
};
#endif

const Table* g_table = &kScalarTable;
Backend g_backend = Backend::Scalar;

} // namespace

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
    }
    return "?";
}

bool avx2_supported() {
#if defined(SENET_HAVE_AVX2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() {
    return g_backend;
}

void set_backend(Backend b) {
    if (b == Backend::Avx2 && !avx2_supported()) {
        throw ValidationError("avx2 kernel backend requested but not supported on this CPU/build");
    }
    g_backend = b;
#if defined(SENET_HAVE_AVX2)
    g_table = (b == Backend::Avx2) ? &kAvx2Table : &kScalarTable;
#else
    g_table = &kScalarTable;
#endif
}

Backend resolve_backend(const char* name) {
    std::string s(name ? name : "");
    if (s == "scalar") return Backend::Scalar;
    if (s == "avx2") {
        if (!avx2_supported()) {
            throw ValidationError("SENET_KERNEL=avx2 requested but AVX2 is unavailable");
        }
        return Backend::Avx2;
    }
    if (s == "auto") return avx2_supported() ? Backend::Avx2 : Backend::Scalar;
    throw ValidationError("unknown kernel backend '" + s + "' (expected scalar|avx2|auto)");
}

void init_backend_from_env() {
    const char* env = std::getenv("SENET_KERNEL");
    if (env && *env) {
        set_backend(resolve_backend(env));
    }
}

float dot(const float* a, const float* b, std::size_t n) {
    return g_table->dot(a, b, n);
}

void matmul_nt(const float* a, std::size_t m_rows, const float* b, std::size_t n_rows,
               std::size_t k, float* out) {
    g_table->matmul_nt(a, m_rows, b, n_rows, k, out);
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
    g_table->axpy(n, alpha, x, y);
}

void masked_relu_fwd(std::size_t n, const float* x, const std::uint8_t* mask, float* y) {
    g_table->masked_relu_fwd(n, x, mask, y);
}

void masked_relu_bwd(std::size_t n, const float* x, const std::uint8_t* mask,
                     const float* dy, float* dx) {
    g_table->masked_relu_bwd(n, x, mask, dy, dx);
}

void sgd_update(std::size_t n, float* theta, const float* grad, float* velocity,
                float lr, float mu, float wd) {
    g_table->sgd_update(n, theta, grad, velocity, lr, mu, wd);
}

} // namespace senet::kernels
