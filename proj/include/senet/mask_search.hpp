// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "senet/allocator.hpp"
#include "senet/arch.hpp"
#include "senet/data.hpp"
#include "senet/mask.hpp"

namespace senet {

/// Running per-element sum of |Psi_pr - Psi_ar| batch means; one epoch's
/// statistics feed one rerank.
struct DiffAccumulator {
    std::vector<std::string> layer_names;
    std::vector<std::vector<double>> sums;   // per layer, [c][h][w] flattened
    std::int64_t batches = 0;

    static DiffAccumulator for_shapes(const std::vector<ReluShape>& shapes);
    void reset();
};

/// Exactly r^l ones at seeded-random positions (pixel granularity) or
/// ceil(r^l / (h*w)) random whole channels (channel granularity).
ReluMask init_mask(const BudgetAllocation& alloc, const std::vector<ReluShape>& shapes,
                   Granularity granularity, std::uint64_t seed);

/// Adds the batch mean of |pr - ar| elementwise; pr/ar are post-ReLU maps in
/// relu_shapes order.
void accumulate_diff(DiffAccumulator& acc, const std::vector<Var>& pr_maps,
                     const std::vector<Tensor>& ar_maps);

/// Pixel: ones at the r^l largest mean diffs (ties: ascending flat index).
/// Channel: fills the r^l_c channels with the largest channel-mean diff.
ReluMask rerank_mask(const DiffAccumulator& acc, const BudgetAllocation& alloc,
                     const std::vector<ReluShape>& shapes, Granularity granularity);

/// Normalized Hamming distance: moved ones / total ones, compared against
/// epsilon. Throws if shapes or ones counts disagree.
double mask_hamming_distance(const ReluMask& prev, const ReluMask& cur);
bool hamming_converged(const ReluMask& prev, const ReluMask& cur, double epsilon);

struct MaskSearchConfig {
    int epochs = 20;
    int batch_size = 32;
    float initial_lr = 0.05f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    float lambda = 0.9f;     // KL weight in (1-lambda)*CE + lambda*KL
    float rho = 4.0f;        // distillation temperature
    double epsilon = 0.05;   // Hamming stop threshold
    Granularity granularity = Granularity::Pixel;
    float flip_prob = 0.0f;
    int crop_pad = 0;
    std::uint64_t seed = 1;
};

struct MaskSearchEpoch {
    int epoch = 0;
    double hamming = 0.0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct MaskSearchResult {
    ReluMask mask;
    Checkpoint best_snapshot;        // PR weights at the best validation epoch
    double best_accuracy = 0.0;
    int best_epoch = 0;
    bool converged = false;
    std::vector<MaskSearchEpoch> history;
};

/// Stage 2: distillation-train a PR copy of the frozen AR model while
/// re-ranking mask positions per epoch from AR/PR post-ReLU discrepancies,
/// until the mask Hamming distance drops below epsilon or epochs run out.
/// Runs at d_r = 1.0 only.
MaskSearchResult run_mask_search(Model& ar_model, const BudgetAllocation& alloc,
                                 const Dataset& train, const Dataset& val,
                                 const MaskSearchConfig& config);

} // namespace senet
