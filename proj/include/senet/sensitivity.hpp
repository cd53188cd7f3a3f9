// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "senet/arch.hpp"
#include "senet/data.hpp"

namespace senet {

struct LayerSensitivity {
    std::string relu_layer;    // ReLU layer this entry describes
    std::string param_layer;   // conv/linear layer it is paired with
    double eta_theta = 0.0;    // fraction of the layer's weights in the global top-d set
    double eta_alpha = 0.0;    // 1 - eta_theta
    double eta_hat = 0.0;      // eta_alpha normalized over active layers
};

struct SensitivityProfile {
    double proxy_density = 0.1;
    std::vector<LayerSensitivity> layers;   // ReLU-layer order
};

/// Per-weight scores of one parameter layer, in the model's weight order.
struct LayerScores {
    std::string layer;
    std::vector<double> scores;   // non-negative, globally normalized to sum 1
};

/// |theta_j * dL/dtheta_j| at the initialized model, from one CE forward/
/// backward pass over `batch`; scores normalized to sum to 1 globally.
std::vector<LayerScores> connection_sensitivity(Model& model, const Tensor& batch,
                                                const std::vector<int>& labels);

/// Same scoring given externally produced weight gradients (one entry per
/// weight layer, shapes matching). Lets tests drive alternative losses.
std::vector<LayerScores> scores_from_gradients(const Model& model);

/// Global top-ceil(d*m) selection (ties: ascending flattened index);
/// eta_theta per layer = selected / layer size.
std::vector<double> layer_pruning_sensitivity(const std::vector<LayerScores>& scores, double proxy_density);

/// eta_alpha = 1 - eta_theta mapped onto ReLU layers via the spec pairing;
/// eta_hat normalized over layers with active[i] != 0. An all-zero eta_alpha
/// degenerates to a uniform eta_hat (with a warning on stderr).
SensitivityProfile relu_sensitivity(const ModelSpec& spec, const std::vector<LayerScores>& scores,
                                    const std::vector<double>& eta_theta, double proxy_density,
                                    const std::vector<int>* active = nullptr);

/// connection_sensitivity + layer_pruning_sensitivity + relu_sensitivity on a
/// sensitivity batch drawn from `data` (min(sample_count, N) samples, seeded).
SensitivityProfile compute_sensitivity_profile(const ModelSpec& spec, const Dataset& data,
                                               double proxy_density, int sample_count,
                                               std::uint64_t seed);

std::string profile_to_json_text(const SensitivityProfile& profile);
SensitivityProfile profile_from_json_text(const std::string& text);
void save_profile(const SensitivityProfile& profile, const std::string& path);
SensitivityProfile load_profile(const std::string& path);

} // namespace senet
