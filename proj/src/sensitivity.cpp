// SPDX-License-Identifier: Apache-2.0
#include "senet/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "senet/checkpoint.hpp"

namespace senet {

using nlohmann::json;

std::vector<LayerScores> scores_from_gradients(const Model& model) {
    const auto& weights = model.weight_params();
    if (weights.empty()) throw ValidationError("sensitivity: model has no scored parameters");
    std::vector<LayerScores> out;
    out.reserve(weights.size());
    double total = 0.0;
    for (const auto& w : weights) {
        LayerScores ls;
        // Var names are "<layer>.weight".
        ls.layer = w->name.substr(0, w->name.rfind('.'));
        ls.scores.resize(w->value.numel());
        for (std::size_t i = 0; i < w->value.numel(); ++i) {
            const double s = std::abs(static_cast<double>(w->value[i]) * w->grad[i]);
            ls.scores[i] = s;
            total += s;
        }
        out.push_back(std::move(ls));
    }
    if (total > 0.0) {
        const double inv = 1.0 / total;
        for (auto& ls : out) {
            for (auto& s : ls.scores) s *= inv;
        }
    }
    return out;
}

std::vector<LayerScores> connection_sensitivity(Model& model, const Tensor& batch,
                                                const std::vector<int>& labels) {
    zero_grad(model.parameters());
    ForwardResult fwd = model.forward(batch, 1.0, /*training=*/false);
    Var loss = ops::ce_loss(fwd.logits, labels);
    backward(loss);
    auto scores = scores_from_gradients(model);
    zero_grad(model.parameters());
    return scores;
}

std::vector<double> layer_pruning_sensitivity(const std::vector<LayerScores>& scores,
                                              double proxy_density) {
    if (proxy_density <= 0.0 || proxy_density >= 1.0) {
        throw ValidationError("proxy density must be in (0,1)");
    }
    std::size_t m = 0;
    for (const auto& ls : scores) m += ls.scores.size();
    if (m == 0) throw ValidationError("sensitivity: no scored parameters");
    const std::size_t keep = static_cast<std::size_t>(std::ceil(proxy_density * static_cast<double>(m)));

    // Global ranking; ties broken by ascending flattened parameter index.
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(m);
    std::size_t offset = 0;
    for (const auto& ls : scores) {
        for (std::size_t i = 0; i < ls.scores.size(); ++i) {
            ranked.emplace_back(ls.scores[i], offset + i);
        }
        offset += ls.scores.size();
    }
    std::nth_element(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(),
                     [](const auto& a, const auto& b) {
                         if (a.first != b.first) return a.first > b.first;
                         return a.second < b.second;
                     });
    std::sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
              [](const auto& a, const auto& b) {
                  if (a.first != b.first) return a.first > b.first;
                  return a.second < b.second;
              });

    std::vector<double> eta_theta(scores.size(), 0.0);
    std::vector<std::size_t> layer_start(scores.size() + 1, 0);
    for (std::size_t l = 0; l < scores.size(); ++l) {
        layer_start[l + 1] = layer_start[l] + scores[l].scores.size();
    }
    std::vector<std::size_t> selected(scores.size(), 0);
    for (std::size_t r = 0; r < keep; ++r) {
        const std::size_t idx = ranked[r].second;
        const auto it = std::upper_bound(layer_start.begin(), layer_start.end(), idx);
        const std::size_t layer = static_cast<std::size_t>(it - layer_start.begin()) - 1;
        ++selected[layer];
    }
    for (std::size_t l = 0; l < scores.size(); ++l) {
        eta_theta[l] = static_cast<double>(selected[l]) / static_cast<double>(scores[l].scores.size());
    }
    return eta_theta;
}

SensitivityProfile relu_sensitivity(const ModelSpec& spec, const std::vector<LayerScores>& scores,
                                    const std::vector<double>& eta_theta, double proxy_density,
                                    const std::vector<int>* active) {
    const auto pairing = relu_parameter_pairing(spec);
    SensitivityProfile profile;
    profile.proxy_density = proxy_density;

    auto theta_of = [&](const std::string& param_layer) {
        for (std::size_t l = 0; l < scores.size(); ++l) {
            if (scores[l].layer == param_layer) return eta_theta[l];
        }
        throw ValidationError("sensitivity: no scores for layer '" + param_layer + "'");
    };

    std::vector<int> act(pairing.size(), 1);
    if (active != nullptr) {
        if (active->size() != pairing.size()) {
            throw ValidationError("sensitivity: active indicator length mismatch");
        }
        act = *active;
    }

    double denom = 0.0;
    for (std::size_t i = 0; i < pairing.size(); ++i) {
        LayerSensitivity ls;
        ls.relu_layer = pairing[i].first;
        ls.param_layer = pairing[i].second;
        ls.eta_theta = theta_of(ls.param_layer);
        ls.eta_alpha = 1.0 - ls.eta_theta;
        profile.layers.push_back(ls);
        if (act[i]) denom += ls.eta_alpha;
    }
    if (denom <= 0.0) {
        std::cerr << "warning: all ReLU sensitivities are zero; using uniform normalization\n";
        int n_active = 0;
        for (std::size_t i = 0; i < profile.layers.size(); ++i) {
            if (act[i]) ++n_active;
        }
        for (std::size_t i = 0; i < profile.layers.size(); ++i) {
            profile.layers[i].eta_hat = act[i] ? 1.0 / n_active : 0.0;
        }
    } else {
        for (std::size_t i = 0; i < profile.layers.size(); ++i) {
            profile.layers[i].eta_hat = act[i] ? profile.layers[i].eta_alpha / denom : 0.0;
        }
    }
    return profile;
}

SensitivityProfile compute_sensitivity_profile(const ModelSpec& spec, const Dataset& data,
                                               double proxy_density, int sample_count,
                                               std::uint64_t seed) {
    Model model = Model::build(spec, seed);
    const int n = std::min(sample_count, data.size());
    if (n < 1) throw ValidationError("sensitivity: empty dataset");
    Rng rng = Rng(seed).substream("sensitivity-batch");
    std::vector<int> idx(static_cast<std::size_t>(data.size()));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = data.size() - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(n));
    Tensor batch;
    std::vector<int> labels;
    gather_batch(data, idx, batch, labels);
    auto scores = connection_sensitivity(model, batch, labels);
    auto eta_theta = layer_pruning_sensitivity(scores, proxy_density);
    return relu_sensitivity(spec, scores, eta_theta, proxy_density);
}

std::string profile_to_json_text(const SensitivityProfile& profile) {
    json doc;
    doc["proxy_density"] = profile.proxy_density;
    doc["layers"] = json::array();
    for (const auto& l : profile.layers) {
        doc["layers"].push_back({{"name", l.relu_layer},
                                 {"param_layer", l.param_layer},
                                 {"eta_theta", l.eta_theta},
                                 {"eta_alpha", l.eta_alpha},
                                 {"eta_hat", l.eta_hat}});
    }
    return doc.dump(2) + "\n";
}

SensitivityProfile profile_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("profile: JSON parse error: ") + e.what());
    }
    SensitivityProfile profile;
    try {
        profile.proxy_density = doc.at("proxy_density").get<double>();
        for (const auto& jl : doc.at("layers")) {
            LayerSensitivity ls;
            ls.relu_layer = jl.at("name").get<std::string>();
            ls.param_layer = jl.at("param_layer").get<std::string>();
            ls.eta_theta = jl.at("eta_theta").get<double>();
            ls.eta_alpha = jl.at("eta_alpha").get<double>();
            ls.eta_hat = jl.at("eta_hat").get<double>();
            profile.layers.push_back(std::move(ls));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("profile: ") + e.what());
    }
    return profile;
}

void save_profile(const SensitivityProfile& profile, const std::string& path) {
    const std::string text = profile_to_json_text(profile);
    write_file_atomic(path, text.data(), text.size());
}

SensitivityProfile load_profile(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open profile " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return profile_from_json_text(text);
}

} // namespace senet
