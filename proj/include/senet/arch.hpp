// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "senet/checkpoint.hpp"
#include "senet/mask.hpp"
#include "senet/ops.hpp"
#include "senet/rng.hpp"

namespace senet {

enum class LayerKind {
    Conv,
    Linear,
    BatchNorm,
    Relu,
    Pool,
    ResidualAdd,
    Flatten,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    std::string name;
    std::string input;    // producing layer; empty = previous layer ("@input" = model input)
    std::string input2;   // second operand for residual-add
    // conv
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    // linear
    int features = 0;
    // pool
    bool pool_max = true;
    bool pool_global = false;
    int pool_size = 2;
    int pool_stride = 2;
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    int in_channels = 0;
    int in_height = 0;
    int in_width = 0;
    int class_count = 0;
    std::vector<double> dropout_rates{1.0};  // sorted ascending, must contain 1.0

    void validate() const;
};

/// JSON schema: {"input_shape":[C,H,W], "classes":K, "dropout_rates":[...],
/// "layers":[{"kind":..., "name":..., ...}]}
ModelSpec model_spec_from_json_text(const std::string& text);
std::string model_spec_to_json_text(const ModelSpec& spec);
ModelSpec load_model_spec(const std::string& path);
void save_model_spec(const ModelSpec& spec, const std::string& path);

struct LayerShape {
    int c = 0, h = 0, w = 0;   // h = w = 0 for rank-2 outputs
    bool flat = false;
};

/// Propagates shapes through the layer graph; throws ValidationError naming
/// the offending layer on failure. Result is keyed by layer name.
std::map<std::string, LayerShape> propagate_shapes(const ModelSpec& spec);

struct ReluShape {
    std::string name;
    int h = 0, w = 0, c = 0;
    std::int64_t capacity() const { return static_cast<std::int64_t>(h) * w * c; }
};

/// One entry per ReLU layer in forward order. Rank-2 ReLUs report h = w = 1.
std::vector<ReluShape> relu_shapes(const ModelSpec& spec);

/// Pairs each ReLU layer with the nearest preceding conv/linear layer in
/// list order; that pairing carries pruning sensitivity onto ReLU layers.
std::vector<std::pair<std::string, std::string>> relu_parameter_pairing(const ModelSpec& spec);

struct ForwardResult {
    Var logits;
    std::vector<Var> post_relu;   // Psi maps in forward order
};

class Model {
public:
    static Model build(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }

    /// d_r must be in the spec's dropout set. Training mode updates the batch
    /// norm statistics tagged with that rate only.
    ForwardResult forward(const Tensor& batch, double d_r, bool training);

    /// Trainable parameters in deterministic order (conv/linear weights, then
    /// per-rate BN affine parameters in layer order).
    const std::vector<Var>& parameters() const { return param_order_; }
    /// Conv/linear weights only, forward order; the scored set for sensitivity.
    const std::vector<Var>& weight_params() const { return weight_order_; }

    void bind_mask(const ReluMask* mask);
    const ReluMask* bound_mask() const { return mask_; }

    Checkpoint to_checkpoint() const;
    void load_state(const Checkpoint& ckpt);
    Model clone() const;

    int rate_index(double d_r) const;   // throws ValidationError if unsupported

private:
    ModelSpec spec_;
    std::map<std::string, LayerShape> shapes_;
    std::unordered_map<std::string, Var> weights_;              // conv/linear
    std::map<std::pair<std::string, int>, ops::BnState> bn_;    // (layer, rate idx)
    std::vector<Var> param_order_;
    std::vector<Var> weight_order_;
    const ReluMask* mask_ = nullptr;
    std::vector<std::uint8_t> ones_scratch_;   // all-ones mask for unbound ReLUs

    static int active_channels(double d_r, int full);
};

} // namespace senet
