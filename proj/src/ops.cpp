// SPDX-License-Identifier: Apache-2.0
#include "senet/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>

#include "senet/kernels.hpp"

namespace senet::ops {

namespace {

void check_rank(const Var& v, int rank, const char* op) {
    if (v->value.rank() != rank) {
        throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) +
                              ", got " + shape_str(v->value.shape()));
    }
}

// Gathers conv patches of one sample into rows of [Ho*Wo, ai*kh*kw].
void im2col(const float* in, int ci, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, float* cols) {
    const int patch = ci * kh * kw;
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            float* row = cols + (static_cast<std::size_t>(oy) * wo + ox) * patch;
            int idx = 0;
            for (int c = 0; c < ci; ++c) {
                const float* plane = in + static_cast<std::size_t>(c) * h * w;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        row[idx++] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                         ? plane[static_cast<std::size_t>(iy) * w + ix]
                                         : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-adds patch-space gradients back to the input plane.
void col2im_add(const float* cols, int ci, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, float* din) {
    const int patch = ci * kh * kw;
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const float* row = cols + (static_cast<std::size_t>(oy) * wo + ox) * patch;
            int idx = 0;
            for (int c = 0; c < ci; ++c) {
                float* plane = din + static_cast<std::size_t>(c) * h * w;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                            plane[static_cast<std::size_t>(iy) * w + ix] += row[idx];
                        }
                        ++idx;
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(Var input, Var weight, int stride, int padding, int active_in, int active_out) {
    check_rank(input, 4, "conv2d input");
    check_rank(weight, 4, "conv2d weight");
    const int n = input->value.dim(0);
    const int ci = input->value.dim(1);
    const int h = input->value.dim(2);
    const int w = input->value.dim(3);
    const int cout_full = weight->value.dim(0);
    const int cin_full = weight->value.dim(1);
    const int kh = weight->value.dim(2);
    const int kw = weight->value.dim(3);
    const int ai = active_in < 0 ? cin_full : active_in;
    const int ao = active_out < 0 ? cout_full : active_out;
    if (ci != ai || ai > cin_full || ao > cout_full) {
        throw ValidationError("conv2d: input channels " + std::to_string(ci) +
                              " vs weight slice " + std::to_string(ai) + "/" +
                              std::to_string(cin_full) + " (out " + std::to_string(ao) + "/" +
                              std::to_string(cout_full) + ")");
    }
    if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
    if (padding < 0) throw ValidationError("conv2d: padding must be >= 0");
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || w + 2 * padding < kw) {
        throw ValidationError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                              " exceeds padded input " + shape_str(input->value.shape()));
    }

    const int patch = ai * kh * kw;
    const std::size_t positions = static_cast<std::size_t>(ho) * wo;
    const int wrow_stride = cin_full * kh * kw;

    auto cols = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * positions * patch);
    Tensor out({n, ao, ho, wo});
    for (int s = 0; s < n; ++s) {
        float* sample_cols = cols->data() + static_cast<std::size_t>(s) * positions * patch;
        im2col(input->value.data() + static_cast<std::size_t>(s) * ci * h * w,
               ci, h, w, kh, kw, stride, padding, ho, wo, sample_cols);
        float* out_s = out.data() + static_cast<std::size_t>(s) * ao * positions;
        for (int o = 0; o < ao; ++o) {
            const float* wrow = weight->value.data() + static_cast<std::size_t>(o) * wrow_stride;
            float* dst = out_s + static_cast<std::size_t>(o) * positions;
            for (std::size_t p = 0; p < positions; ++p) {
                dst[p] = kernels::dot(sample_cols + p * patch, wrow, static_cast<std::size_t>(patch));
            }
        }
    }

    auto in = input;
    auto wt = weight;
    return make_node(std::move(out), {input, weight},
        [in, wt, cols, n, ci, h, w, kh, kw, stride, padding, ho, wo, ao, patch, positions,
         wrow_stride](Node& node) {
            const float* dout = node.grad.data();
            float* dw = wt->needs_grad ? wt->ensure_grad().data() : nullptr;
            float* din = in->needs_grad ? in->ensure_grad().data() : nullptr;
            std::vector<float> dcols;
            if (din) dcols.assign(positions * static_cast<std::size_t>(patch), 0.0f);
            for (int s = 0; s < n; ++s) {
                const float* sample_cols = cols->data() + static_cast<std::size_t>(s) * positions * patch;
                const float* dout_s = dout + static_cast<std::size_t>(s) * ao * positions;
                if (dw) {
                    for (int o = 0; o < ao; ++o) {
                        float* dwrow = dw + static_cast<std::size_t>(o) * wrow_stride;
                        const float* g = dout_s + static_cast<std::size_t>(o) * positions;
                        for (std::size_t p = 0; p < positions; ++p) {
                            if (g[p] != 0.0f) {
                                kernels::axpy(static_cast<std::size_t>(patch), g[p],
                                              sample_cols + p * patch, dwrow);
                            }
                        }
                    }
                }
                if (din) {
                    std::memset(dcols.data(), 0, dcols.size() * sizeof(float));
                    for (int o = 0; o < ao; ++o) {
                        const float* wrow = wt->value.data() + static_cast<std::size_t>(o) * wrow_stride;
                        const float* g = dout_s + static_cast<std::size_t>(o) * positions;
                        for (std::size_t p = 0; p < positions; ++p) {
                            if (g[p] != 0.0f) {
                                kernels::axpy(static_cast<std::size_t>(patch), g[p], wrow,
                                              dcols.data() + p * patch);
                            }
                        }
                    }
                    col2im_add(dcols.data(), ci, h, w, kh, kw, stride, padding, ho, wo,
                               din + static_cast<std::size_t>(s) * ci * h * w);
                }
            }
        });
}

Var linear(Var input, Var weight, int active_in, int active_out) {
    check_rank(input, 2, "linear input");
    check_rank(weight, 2, "linear weight");
    const int n = input->value.dim(0);
    const int f = input->value.dim(1);
    const int o_full = weight->value.dim(0);
    const int f_full = weight->value.dim(1);
    const int ai = active_in < 0 ? f_full : active_in;
    const int ao = active_out < 0 ? o_full : active_out;
    if (f != ai || ai > f_full || ao > o_full) {
        throw ValidationError("linear: input features " + std::to_string(f) +
                              " vs weight slice " + std::to_string(ai) + "/" + std::to_string(f_full));
    }
    Tensor out({n, ao});
    for (int s = 0; s < n; ++s) {
        const float* x = input->value.data() + static_cast<std::size_t>(s) * f;
        float* dst = out.data() + static_cast<std::size_t>(s) * ao;
        for (int o = 0; o < ao; ++o) {
            dst[o] = kernels::dot(x, weight->value.data() + static_cast<std::size_t>(o) * f_full,
                                  static_cast<std::size_t>(f));
        }
    }
    auto in = input;
    auto wt = weight;
    return make_node(std::move(out), {input, weight}, [in, wt, n, f, ao, f_full](Node& node) {
        const float* dout = node.grad.data();
        float* dw = wt->needs_grad ? wt->ensure_grad().data() : nullptr;
        float* din = in->needs_grad ? in->ensure_grad().data() : nullptr;
        for (int s = 0; s < n; ++s) {
            const float* g = dout + static_cast<std::size_t>(s) * ao;
            const float* x = in->value.data() + static_cast<std::size_t>(s) * f;
            for (int o = 0; o < ao; ++o) {
                if (g[o] == 0.0f) continue;
                if (dw) {
                    kernels::axpy(static_cast<std::size_t>(f), g[o], x,
                                  dw + static_cast<std::size_t>(o) * f_full);
                }
                if (din) {
                    kernels::axpy(static_cast<std::size_t>(f), g[o],
                                  wt->value.data() + static_cast<std::size_t>(o) * f_full,
                                  din + static_cast<std::size_t>(s) * f);
                }
            }
        }
    });
}

BnState make_bn_state(int channels, const std::string& prefix) {
    BnState st;
    st.gamma = make_param(Tensor::full({channels}, 1.0f), prefix + ".gamma");
    st.beta = make_param(Tensor::zeros({channels}), prefix + ".beta");
    st.running_mean = Tensor::zeros({channels});
    st.running_var = Tensor::full({channels}, 1.0f);
    return st;
}

Var batchnorm(Var input, BnState& state, bool training, int active_c) {
    const int rank = input->value.rank();
    if (rank != 2 && rank != 4) {
        throw ValidationError("batchnorm: expected rank 2 or 4, got " + shape_str(input->value.shape()));
    }
    const int n = input->value.dim(0);
    const int c = input->value.dim(1);
    const int spatial = rank == 4 ? input->value.dim(2) * input->value.dim(3) : 1;
    const int c_full = state.gamma->value.dim(0);
    const int ac = active_c < 0 ? c_full : active_c;
    if (c != ac || ac > c_full) {
        throw ValidationError("batchnorm: input channels " + std::to_string(c) +
                              " vs state slice " + std::to_string(ac) + "/" + std::to_string(c_full));
    }
    const std::size_t per_channel = static_cast<std::size_t>(n) * spatial;
    const std::size_t sample_stride = static_cast<std::size_t>(c) * spatial;

    Tensor out(input->value.shape());
    // Cached for backward: per-channel inverse std and normalized values.
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(c));
    auto xhat = std::make_shared<std::vector<float>>(input->value.numel());
    auto batch_mean = std::make_shared<std::vector<float>>(static_cast<std::size_t>(c));

    const float* x = input->value.data();
    for (int ch = 0; ch < c; ++ch) {
        float mean_f, istd;
        if (training) {
            double sum = 0.0;
            for (int s = 0; s < n; ++s) {
                const float* base = x + s * sample_stride + static_cast<std::size_t>(ch) * spatial;
                for (int i = 0; i < spatial; ++i) sum += base[i];
            }
            const double mean = sum / static_cast<double>(per_channel);
            double var_acc = 0.0;
            for (int s = 0; s < n; ++s) {
                const float* base = x + s * sample_stride + static_cast<std::size_t>(ch) * spatial;
                for (int i = 0; i < spatial; ++i) {
                    const double d = base[i] - mean;
                    var_acc += d * d;
                }
            }
            const double var = var_acc / static_cast<double>(per_channel);
            const double unbiased = per_channel > 1
                                        ? var_acc / static_cast<double>(per_channel - 1)
                                        : var;
            const float m = state.momentum;
            state.running_mean[static_cast<std::size_t>(ch)] =
                (1.0f - m) * state.running_mean[static_cast<std::size_t>(ch)] + m * static_cast<float>(mean);
            state.running_var[static_cast<std::size_t>(ch)] =
                (1.0f - m) * state.running_var[static_cast<std::size_t>(ch)] + m * static_cast<float>(unbiased);
            mean_f = static_cast<float>(mean);
            istd = static_cast<float>(1.0 / std::sqrt(var + state.eps));
        } else {
            mean_f = state.running_mean[static_cast<std::size_t>(ch)];
            istd = 1.0f / std::sqrt(state.running_var[static_cast<std::size_t>(ch)] + state.eps);
        }
        (*inv_std)[static_cast<std::size_t>(ch)] = istd;
        (*batch_mean)[static_cast<std::size_t>(ch)] = mean_f;
        const float g = state.gamma->value[static_cast<std::size_t>(ch)];
        const float b = state.beta->value[static_cast<std::size_t>(ch)];
        for (int s = 0; s < n; ++s) {
            const std::size_t off = s * sample_stride + static_cast<std::size_t>(ch) * spatial;
            for (int i = 0; i < spatial; ++i) {
                const float xh = (x[off + i] - mean_f) * istd;
                (*xhat)[off + i] = xh;
                out.data()[off + i] = g * xh + b;
            }
        }
    }

    auto in = input;
    auto gamma = state.gamma;
    auto beta = state.beta;
    return make_node(std::move(out), {input, state.gamma, state.beta},
        [in, gamma, beta, inv_std, xhat, n, c, spatial, sample_stride, training](Node& node) {
            const float* dy = node.grad.data();
            float* din = in->needs_grad ? in->ensure_grad().data() : nullptr;
            float* dgamma = gamma->ensure_grad().data();
            float* dbeta = beta->ensure_grad().data();
            const std::size_t per_channel = static_cast<std::size_t>(n) * spatial;
            for (int ch = 0; ch < c; ++ch) {
                double sum_dy = 0.0;
                double sum_dy_xhat = 0.0;
                for (int s = 0; s < n; ++s) {
                    const std::size_t off = s * sample_stride + static_cast<std::size_t>(ch) * spatial;
                    for (int i = 0; i < spatial; ++i) {
                        sum_dy += dy[off + i];
                        sum_dy_xhat += static_cast<double>(dy[off + i]) * (*xhat)[off + i];
                    }
                }
                dgamma[ch] += static_cast<float>(sum_dy_xhat);
                dbeta[ch] += static_cast<float>(sum_dy);
                if (!din) continue;
                const float g = gamma->value[static_cast<std::size_t>(ch)];
                const float istd = (*inv_std)[static_cast<std::size_t>(ch)];
                if (training) {
                    const float mean_dy = static_cast<float>(sum_dy / static_cast<double>(per_channel));
                    const float mean_dy_xhat =
                        static_cast<float>(sum_dy_xhat / static_cast<double>(per_channel));
                    for (int s = 0; s < n; ++s) {
                        const std::size_t off = s * sample_stride + static_cast<std::size_t>(ch) * spatial;
                        for (int i = 0; i < spatial; ++i) {
                            din[off + i] += g * istd *
                                (dy[off + i] - mean_dy - (*xhat)[off + i] * mean_dy_xhat);
                        }
                    }
                } else {
                    for (int s = 0; s < n; ++s) {
                        const std::size_t off = s * sample_stride + static_cast<std::size_t>(ch) * spatial;
                        for (int i = 0; i < spatial; ++i) {
                            din[off + i] += g * istd * dy[off + i];
                        }
                    }
                }
            }
        });
}

Var masked_relu(Var input, const std::uint8_t* mask, std::size_t mask_len) {
    const int n = input->value.dim(0);
    const std::size_t per_sample = input->value.numel() / static_cast<std::size_t>(n);
    if (mask_len != per_sample) {
        throw ValidationError("masked_relu: mask length " + std::to_string(mask_len) +
                              " does not match per-sample elements " + std::to_string(per_sample));
    }
    Tensor out(input->value.shape());
    for (int s = 0; s < n; ++s) {
        kernels::masked_relu_fwd(per_sample, input->value.data() + s * per_sample, mask,
                                 out.data() + s * per_sample);
    }
    auto in = input;
    return make_node(std::move(out), {input}, [in, mask, per_sample, n](Node& node) {
        if (!in->needs_grad) return;
        float* din = in->ensure_grad().data();
        for (int s = 0; s < n; ++s) {
            kernels::masked_relu_bwd(per_sample, in->value.data() + s * per_sample, mask,
                                     node.grad.data() + s * per_sample, din + s * per_sample);
        }
    });
}

Var maxpool2d(Var input, int size, int stride) {
    check_rank(input, 4, "maxpool2d");
    const int n = input->value.dim(0);
    const int c = input->value.dim(1);
    const int h = input->value.dim(2);
    const int w = input->value.dim(3);
    if (size < 1 || stride < 1 || h < size || w < size) {
        throw ValidationError("maxpool2d: window " + std::to_string(size) + " stride " +
                              std::to_string(stride) + " invalid for " + shape_str(input->value.shape()));
    }
    const int ho = (h - size) / stride + 1;
    const int wo = (w - size) / stride + 1;
    Tensor out({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
    const float* x = input->value.data();
    std::size_t oi = 0;
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const float* plane = x + (static_cast<std::size_t>(s) * c + ch) * h * w;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    float best = plane[static_cast<std::size_t>(oy * stride) * w + ox * stride];
                    int best_idx = oy * stride * w + ox * stride;
                    for (int ky = 0; ky < size; ++ky) {
                        for (int kx = 0; kx < size; ++kx) {
                            const int idx = (oy * stride + ky) * w + (ox * stride + kx);
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data()[oi] = best;
                    (*argmax)[oi] = best_idx;
                    ++oi;
                }
            }
        }
    }
    auto in = input;
    const std::size_t plane_in = static_cast<std::size_t>(h) * w;
    const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
    return make_node(std::move(out), {input}, [in, argmax, n, c, plane_in, plane_out](Node& node) {
        if (!in->needs_grad) return;
        float* din = in->ensure_grad().data();
        const float* dy = node.grad.data();
        for (std::size_t pc = 0; pc < static_cast<std::size_t>(n) * c; ++pc) {
            float* dplane = din + pc * plane_in;
            const float* gplane = dy + pc * plane_out;
            const std::int32_t* am = argmax->data() + pc * plane_out;
            for (std::size_t i = 0; i < plane_out; ++i) {
                dplane[am[i]] += gplane[i];
            }
        }
    });
}

Var global_avgpool(Var input) {
    check_rank(input, 4, "global_avgpool");
    const int n = input->value.dim(0);
    const int c = input->value.dim(1);
    const int spatial = input->value.dim(2) * input->value.dim(3);
    Tensor out({n, c});
    const float* x = input->value.data();
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            const float* base = x + (static_cast<std::size_t>(s) * c + ch) * spatial;
            for (int i = 0; i < spatial; ++i) acc += base[i];
            out.data()[static_cast<std::size_t>(s) * c + ch] =
                static_cast<float>(acc / static_cast<double>(spatial));
        }
    }
    auto in = input;
    return make_node(std::move(out), {input}, [in, n, c, spatial](Node& node) {
        if (!in->needs_grad) return;
        float* din = in->ensure_grad().data();
        const float inv = 1.0f / static_cast<float>(spatial);
        for (std::size_t pc = 0; pc < static_cast<std::size_t>(n) * c; ++pc) {
            const float g = node.grad[pc] * inv;
            float* base = din + pc * static_cast<std::size_t>(spatial);
            for (int i = 0; i < spatial; ++i) base[i] += g;
        }
    });
}

Var flatten(Var input) {
    check_rank(input, 4, "flatten");
    const int n = input->value.dim(0);
    const int f = static_cast<int>(input->value.numel()) / n;
    Tensor out({n, f});
    std::memcpy(out.data(), input->value.data(), input->value.numel() * sizeof(float));
    auto in = input;
    return make_node(std::move(out), {input}, [in](Node& node) {
        if (!in->needs_grad) return;
        float* din = in->ensure_grad().data();
        kernels::axpy(node.grad.numel(), 1.0f, node.grad.data(), din);
    });
}

Var add(Var a, Var b) {
    if (!a->value.same_shape(b->value)) {
        throw ValidationError("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                              shape_str(b->value.shape()));
    }
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    const float* pb = b->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = pa[i] + pb[i];
    auto va = a;
    auto vb = b;
    return make_node(std::move(out), {a, b}, [va, vb](Node& node) {
        if (va->needs_grad) {
            kernels::axpy(node.grad.numel(), 1.0f, node.grad.data(), va->ensure_grad().data());
        }
        if (vb->needs_grad) {
            kernels::axpy(node.grad.numel(), 1.0f, node.grad.data(), vb->ensure_grad().data());
        }
    });
}

Var scale(Var x, float s) {
    Tensor out(x->value.shape());
    const float* px = x->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = s * px[i];
    auto vx = x;
    return make_node(std::move(out), {x}, [vx, s](Node& node) {
        if (vx->needs_grad) {
            kernels::axpy(node.grad.numel(), s, node.grad.data(), vx->ensure_grad().data());
        }
    });
}

namespace {
// Row-wise softmax with max subtraction; double accumulation for the norm.
void softmax_rows(const float* logits, int n, int k, float inv_temp, float* probs) {
    for (int s = 0; s < n; ++s) {
        const float* row = logits + static_cast<std::size_t>(s) * k;
        float* prow = probs + static_cast<std::size_t>(s) * k;
        float mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            const float e = std::exp((row[j] - mx) * inv_temp);
            prow[j] = e;
            denom += e;
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (int j = 0; j < k; ++j) prow[j] *= inv;
    }
}
} // namespace

Var ce_loss(Var logits, const std::vector<int>& labels) {
    check_rank(logits, 2, "ce_loss");
    const int n = logits->value.dim(0);
    const int k = logits->value.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw ValidationError("ce_loss: batch " + std::to_string(n) + " vs labels " +
                              std::to_string(labels.size()));
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= k) {
            throw ValidationError("ce_loss: label " + std::to_string(lab) + " out of range [0," +
                                  std::to_string(k) + ")");
        }
    }
    auto probs = std::make_shared<std::vector<float>>(logits->value.numel());
    double loss = 0.0;
    for (int s = 0; s < n; ++s) {
        const float* row = logits->value.data() + static_cast<std::size_t>(s) * k;
        float* prow = probs->data() + static_cast<std::size_t>(s) * k;
        float mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            const float e = std::exp(row[j] - mx);
            prow[j] = e;
            denom += e;
        }
        loss += std::log(denom) - static_cast<double>(row[labels[static_cast<std::size_t>(s)]] - mx);
        const float inv = static_cast<float>(1.0 / denom);
        for (int j = 0; j < k; ++j) prow[j] *= inv;
    }
    loss /= static_cast<double>(n);
    auto lv = logits;
    auto labs = std::make_shared<std::vector<int>>(labels);
    return make_node(Tensor::scalar(static_cast<float>(loss)), {logits},
        [lv, probs, labs, n, k](Node& node) {
            if (!lv->needs_grad) return;
            const float g = node.grad[0] / static_cast<float>(n);
            float* din = lv->ensure_grad().data();
            for (int s = 0; s < n; ++s) {
                const std::size_t off = static_cast<std::size_t>(s) * k;
                for (int j = 0; j < k; ++j) {
                    float p = (*probs)[off + j];
                    if (j == (*labs)[static_cast<std::size_t>(s)]) p -= 1.0f;
                    din[off + j] += g * p;
                }
            }
        });
}

Var kl_loss(const Tensor& teacher_logits, Var student_logits, float rho) {
    check_rank(student_logits, 2, "kl_loss");
    if (rho <= 0.0f) throw ValidationError("kl_loss: temperature must be positive");
    if (!teacher_logits.same_shape(student_logits->value)) {
        throw ValidationError("kl_loss: teacher shape " + shape_str(teacher_logits.shape()) +
                              " vs student " + shape_str(student_logits->value.shape()));
    }
    const int n = teacher_logits.dim(0);
    const int k = teacher_logits.dim(1);
    const float inv_temp = 1.0f / rho;
    auto pt = std::make_shared<std::vector<float>>(teacher_logits.numel());
    auto ps = std::make_shared<std::vector<float>>(teacher_logits.numel());
    softmax_rows(teacher_logits.data(), n, k, inv_temp, pt->data());
    softmax_rows(student_logits->value.data(), n, k, inv_temp, ps->data());
    double loss = 0.0;
    for (std::size_t i = 0; i < pt->size(); ++i) {
        const double t = (*pt)[i];
        if (t > 0.0) {
            loss += t * (std::log(t) - std::log(std::max((*ps)[i], 1e-30f)));
        }
    }
    loss /= static_cast<double>(n);
    auto sv = student_logits;
    return make_node(Tensor::scalar(static_cast<float>(loss)), {student_logits},
        [sv, pt, ps, n, k, inv_temp](Node& node) {
            if (!sv->needs_grad) return;
            const float g = node.grad[0] * inv_temp / static_cast<float>(n);
            float* din = sv->ensure_grad().data();
            for (std::size_t i = 0; i < pt->size(); ++i) {
                din[i] += g * ((*ps)[i] - (*pt)[i]);
            }
        });
}

Var pram_loss(const std::vector<Var>& pr_maps, const std::vector<Tensor>& ar_maps) {
    if (pr_maps.size() != ar_maps.size()) {
        throw ValidationError("pram_loss: " + std::to_string(pr_maps.size()) + " PR maps vs " +
                              std::to_string(ar_maps.size()) + " AR maps");
    }
    constexpr float kNormEps = 1e-12f;
    double total = 0.0;
    // Per pair and sample: cached unit-difference data the backward needs.
    struct PairCache {
        std::vector<float> diff;     // d = u/nu - a/na, flattened [n][dim]
        std::vector<float> u_norm;   // nu per sample (eps-guarded)
        std::vector<float> d_norm;   // ||d|| per sample
        std::vector<std::uint8_t> clamped;  // ||u|| <= eps
        int n = 0;
        std::size_t dim = 0;
    };
    auto caches = std::make_shared<std::vector<PairCache>>(pr_maps.size());
    for (std::size_t m = 0; m < pr_maps.size(); ++m) {
        const Tensor& u_all = pr_maps[m]->value;
        const Tensor& a_all = ar_maps[m];
        if (!u_all.same_shape(a_all)) {
            throw ValidationError("pram_loss: pair " + std::to_string(m) + " shape mismatch " +
                                  shape_str(u_all.shape()) + " vs " + shape_str(a_all.shape()));
        }
        const int n = u_all.dim(0);
        const std::size_t dim = u_all.numel() / static_cast<std::size_t>(n);
        PairCache& cache = (*caches)[m];
        cache.n = n;
        cache.dim = dim;
        cache.diff.resize(u_all.numel());
        cache.u_norm.resize(static_cast<std::size_t>(n));
        cache.d_norm.resize(static_cast<std::size_t>(n));
        cache.clamped.resize(static_cast<std::size_t>(n));
        double pair_loss = 0.0;
        for (int s = 0; s < n; ++s) {
            const float* u = u_all.data() + s * dim;
            const float* a = a_all.data() + s * dim;
            float* d = cache.diff.data() + s * dim;
            const double nu_raw = std::sqrt(static_cast<double>(kernels::dot(u, u, dim)));
            const double na_raw = std::sqrt(static_cast<double>(kernels::dot(a, a, dim)));
            const bool clamped = nu_raw <= kNormEps;
            const double nu = std::max(nu_raw, static_cast<double>(kNormEps));
            const double na = std::max(na_raw, static_cast<double>(kNormEps));
            double dd = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double di = u[i] / nu - a[i] / na;
                d[i] = static_cast<float>(di);
                dd += di * di;
            }
            const double dn = std::sqrt(dd);
            cache.u_norm[static_cast<std::size_t>(s)] = static_cast<float>(nu);
            cache.d_norm[static_cast<std::size_t>(s)] = static_cast<float>(dn);
            cache.clamped[static_cast<std::size_t>(s)] = clamped ? 1 : 0;
            pair_loss += dn;
        }
        total += pair_loss / static_cast<double>(n);
    }
    auto prs = std::make_shared<std::vector<Var>>(pr_maps);
    std::vector<Var> inputs(pr_maps.begin(), pr_maps.end());
    return make_node(Tensor::scalar(static_cast<float>(total)), std::move(inputs),
        [prs, caches](Node& node) {
            const float gout = node.grad[0];
            for (std::size_t m = 0; m < prs->size(); ++m) {
                Var& u_var = (*prs)[m];
                if (!u_var->needs_grad) continue;
                const PairCache& cache = (*caches)[m];
                float* du_all = u_var->ensure_grad().data();
                const float scale_batch = gout / static_cast<float>(cache.n);
                for (int s = 0; s < cache.n; ++s) {
                    const float dn = cache.d_norm[static_cast<std::size_t>(s)];
                    if (dn <= 0.0f) continue;
                    const float* u = u_var->value.data() + s * cache.dim;
                    const float* d = cache.diff.data() + s * cache.dim;
                    float* du = du_all + s * cache.dim;
                    const float nu = cache.u_norm[static_cast<std::size_t>(s)];
                    const float coeff = scale_batch / (dn * nu);
                    if (cache.clamped[static_cast<std::size_t>(s)]) {
                        // Norm pinned at eps: d(u/eps)/du = I/eps.
                        for (std::size_t i = 0; i < cache.dim; ++i) du[i] += coeff * d[i];
                    } else {
                        // d(u/||u||)/du = (I - uu^T/||u||^2)/||u||.
                        const double u_dot_d = kernels::dot(u, d, cache.dim);
                        const float proj = static_cast<float>(u_dot_d) / (nu * nu);
                        for (std::size_t i = 0; i < cache.dim; ++i) {
                            du[i] += coeff * (d[i] - proj * u[i]);
                        }
                    }
                }
            }
        });
}

void Sgd::step(const std::vector<Var>& params) {
    for (const auto& p : params) {
        Tensor& vel = velocity_[p.get()];
        if (!vel.defined()) {
            vel = Tensor::zeros(p->value.shape());
        }
        kernels::sgd_update(p->value.numel(), p->value.data(), p->ensure_grad().data(),
                            vel.data(), cfg_.learning_rate, cfg_.momentum, cfg_.weight_decay);
    }
}

} // namespace senet::ops
