// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "senet/graph.hpp"

namespace senet::ops {

// Forward ops build tape nodes; see graph.hpp. All ops accept physically
// sliced activations for ordered-dropout sub-models: an activation tensor
// carries only its active channels, while parameter tensors always stay
// full-sized and the ops read/write a contiguous prefix of them. active_*
// of -1 means "use the parameter's full extent".

/// Cross-correlation, NCHW x (Cout,Cin,kh,kw), zero padding. No bias.
Var conv2d(Var input, Var weight, int stride, int padding,
           int active_in = -1, int active_out = -1);

/// input (N,F) x weight (O,F) -> (N,O). No bias.
Var linear(Var input, Var weight, int active_in = -1, int active_out = -1);

/// One batch-norm parameter/statistics set. A model keeps a distinct BnState
/// per supported dropout rate so each width trains its own statistics.
struct BnState {
    Var gamma;            // [C], init 1
    Var beta;             // [C], init 0
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    float momentum = 0.1f;
    float eps = 1e-5f;
};

BnState make_bn_state(int channels, const std::string& prefix);

/// Rank-4 input normalizes per channel over N*H*W; rank-2 treats features as
/// channels. Training mode uses batch statistics and updates the running
/// stats of this state only; eval mode reads the running stats.
Var batchnorm(Var input, BnState& state, bool training, int active_c = -1);

/// mask has one byte (0/1) per per-sample element, broadcast over the batch.
/// mask=1 -> ReLU, mask=0 -> identity. Caller keeps the mask alive until the
/// graph is dropped.
Var masked_relu(Var input, const std::uint8_t* mask, std::size_t mask_len);

Var maxpool2d(Var input, int size, int stride);
Var global_avgpool(Var input);   // (N,C,H,W) -> (N,C)
Var flatten(Var input);          // (N,C,H,W) -> (N,C*H*W)
Var add(Var a, Var b);
Var scale(Var x, float s);

/// Mean softmax cross-entropy over the batch.
Var ce_loss(Var logits, const std::vector<int>& labels);

/// KL(softmax(teacher/rho) || softmax(student/rho)), batch mean. The teacher
/// side is a plain tensor: no gradient flows into it and no extra rho^2
/// factor is applied.
Var kl_loss(const Tensor& teacher_logits, Var student_logits, float rho);

/// Post-ReLU activation mismatch: per pair, batch mean of
/// || u/max(||u||,eps) - a/max(||a||,eps) ||_2 with eps = 1e-12, summed over
/// pairs. The reference maps carry no gradient.
Var pram_loss(const std::vector<Var>& pr_maps, const std::vector<Tensor>& ar_maps);

struct SgdConfig {
    float learning_rate = 0.05f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
};

/// SGD with momentum and decoupled-from-nothing classic weight decay:
/// v <- mu*v + (g + wd*theta); theta <- theta - lr*v.
class Sgd {
public:
    explicit Sgd(SgdConfig cfg) : cfg_(cfg) {
        if (cfg_.learning_rate <= 0.0f) throw ValidationError("learning_rate must be > 0");
        if (cfg_.momentum < 0.0f || cfg_.momentum >= 1.0f) throw ValidationError("momentum must be in [0,1)");
        if (cfg_.weight_decay < 0.0f) throw ValidationError("weight_decay must be >= 0");
    }

    float learning_rate() const { return cfg_.learning_rate; }
    void set_learning_rate(float lr) { cfg_.learning_rate = lr; }

    void step(const std::vector<Var>& params);
    void zero_grad(const std::vector<Var>& params) { senet::zero_grad(params); }

private:
    SgdConfig cfg_;
    std::unordered_map<Node*, Tensor> velocity_;
};

} // namespace senet::ops
