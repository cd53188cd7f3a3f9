// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "senet/arch.hpp"
#include "senet/data.hpp"
#include "senet/mask.hpp"

namespace senet {

struct TrainConfig {
    int epochs_stage1 = 40;
    int epochs_stage2 = 20;
    int epochs_stage3 = 30;
    int batch_size = 32;
    float lr_stage1 = 0.05f;
    float lr_stage2 = 0.05f;
    float lr_stage3 = 0.01f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    float lambda = 0.9f;         // CE/KL balance
    float beta = 1000.0f;        // PRAM weight
    float rho = 4.0f;            // distillation temperature
    double epsilon = 0.05;       // mask-search Hamming threshold
    double proxy_density = 0.1;
    int sensitivity_samples = 256;
    std::vector<double> dropout_rates{1.0};
    double val_fraction = 0.1;
    float flip_prob = 0.0f;
    int crop_pad = 0;
    std::uint64_t seed = 1;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    int stage = 0;
    double d_r = 1.0;
    double ce = 0.0;
    double kl = 0.0;
    double pram = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double lr = 0.0;
};

/// Step schedule: decays by 0.1 at the 62.5%, 75% and 87.5% completion points
/// (integer arithmetic, boundaries inclusive).
float lr_at(int epoch, int total_epochs, float initial_lr);

/// Eq.-style stage-3 combination: (1-lambda)*CE + lambda*KL, plus
/// (beta/2)*PRAM only for the full-width model (d_r == 1.0).
Var stage3_loss(Var ce, Var kl, Var pram, double d_r, float lambda, float beta);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class;
};

EvalResult evaluate(Model& model, const Dataset& data, double d_r, int batch_size = 64);

using MetricsSink = std::vector<EpochMetrics>;

/// Stage 1: ordered-dropout CE training of the all-ReLU model. Per minibatch
/// the loop walks the sorted dropout set, accumulates each sub-model's CE
/// gradient into the shared buffers, then applies one SGD step.
Model train_ar(const ModelSpec& spec, const Dataset& train, const Dataset& val,
               const TrainConfig& config, MetricsSink* metrics = nullptr);

/// Stage 3: distillation fine-tuning of the PR model (mask frozen, AR teacher
/// frozen). `stage2_snapshot` seeds the weights; when empty the PR model
/// falls back to the AR weights with a warning.
Model finetune_pr(Model& ar_model, const ReluMask& mask, const Checkpoint& stage2_snapshot,
                  const Dataset& train, const Dataset& val, const TrainConfig& config,
                  MetricsSink* metrics = nullptr);

void write_metrics_csv(const MetricsSink& metrics, const std::string& path);

} // namespace senet
