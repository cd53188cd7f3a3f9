// SPDX-License-Identifier: Apache-2.0
// Test-only reference implementations. These stay independent of the engine
// paths they check: direct-summation convolution, triple-loop matmul, and
// central finite differences.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "senet/graph.hpp"
#include "senet/rng.hpp"
#include "senet/tensor.hpp"

namespace senet::testing {

/// Direct-summation cross-correlation, double accumulators.
inline Tensor naive_conv2d(const Tensor& input, const Tensor& weight, int stride, int padding) {
    const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    Tensor out({n, co, ho, wo});
    for (int s = 0; s < n; ++s) {
        for (int o = 0; o < co; ++o) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int c = 0; c < ci; ++c) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride + ky - padding;
                                const int ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += static_cast<double>(
                                           input[((static_cast<std::size_t>(s) * ci + c) * h + iy) * w + ix]) *
                                       weight[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.data()[((static_cast<std::size_t>(s) * co + o) * ho + oy) * wo + ox] =
                        static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

/// Triple-loop matmul for linear: (N,F) x (O,F) -> (N,O).
inline Tensor naive_linear(const Tensor& input, const Tensor& weight) {
    const int n = input.dim(0), f = input.dim(1), o = weight.dim(0);
    Tensor out({n, o});
    for (int s = 0; s < n; ++s) {
        for (int j = 0; j < o; ++j) {
            double acc = 0.0;
            for (int k = 0; k < f; ++k) {
                acc += static_cast<double>(input[static_cast<std::size_t>(s) * f + k]) *
                       weight[static_cast<std::size_t>(j) * f + k];
            }
            out.data()[static_cast<std::size_t>(s) * o + j] = static_cast<float>(acc);
        }
    }
    return out;
}

inline void fill_uniform(Tensor& t, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.next_uniform(lo, hi);
}

/// Test-only scalarizer: projects a tensor output onto a fixed vector so any
/// op can be finite-difference checked through one scalar.
inline Var weighted_sum(Var y, const std::vector<float>& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y->value.numel(); ++i) {
        acc += static_cast<double>(v[i]) * y->value[i];
    }
    Var yin = y;
    return make_node(Tensor::scalar(static_cast<float>(acc)), {y}, [yin, v](Node& node) {
        if (!yin->needs_grad) return;
        Tensor& g = yin->ensure_grad();
        for (std::size_t i = 0; i < v.size(); ++i) {
            g.data()[i] += node.grad[0] * v[i];
        }
    });
}

struct GradCheckResult {
    double rel_err = 0.0;
    double fd_norm = 0.0;
    double an_norm = 0.0;
};

/// Central finite differences of `loss_fn` (which must read `leaf` afresh on
/// every call) against `analytic`, compared by relative L2 error.
inline GradCheckResult fd_check(const std::function<double()>& loss_fn, Tensor& leaf,
                                const Tensor& analytic, float h_base = 1e-2f) {
    GradCheckResult res;
    double dd = 0.0, da = 0.0, dboth = 0.0;
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
        const float saved = leaf[i];
        const float h = h_base * std::max(1.0f, std::abs(saved));
        leaf.data()[i] = saved + h;
        const double lp = loss_fn();
        leaf.data()[i] = saved - h;
        const double lm = loss_fn();
        leaf.data()[i] = saved;
        const double fd = (lp - lm) / (2.0 * static_cast<double>(h));
        const double an = analytic[i];
        dd += fd * fd;
        da += an * an;
        dboth += (fd - an) * (fd - an);
    }
    res.fd_norm = std::sqrt(dd);
    res.an_norm = std::sqrt(da);
    res.rel_err = std::sqrt(dboth) / std::max({res.fd_norm, res.an_norm, 1e-12});
    return res;
}

} // namespace senet::testing
