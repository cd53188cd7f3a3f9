// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "senet/rng.hpp"
#include "senet/tensor.hpp"

namespace senet {

struct Dataset {
    Tensor images;            // N x C x H x W, values in [0,1] (pre-normalization)
    std::vector<int> labels;  // [0, classes)
    int classes = 0;

    int size() const { return images.defined() ? images.dim(0) : 0; }
    void validate() const;
};

/// Class-conditioned striped/colored images with seeded noise. difficulty 0
/// keeps a strong per-class color bias (linearly separable); raising it fades
/// the color cue toward the stripe pattern and adds noise. Exactly n images
/// per class; deterministic per seed (integer/fixed-width arithmetic only).
Dataset synth_generate(int classes, int per_class, int channels, int height, int width,
                       double difficulty, std::uint64_t seed);

/// Standard CIFAR-10 binary batch layout: records of 1 label byte + 3072
/// pixel bytes (R,G,B planes, 32x32 row-major). Pixels scaled to [0,1].
Dataset read_cifar10_binary(const std::string& path);
Dataset read_cifar10_binary(const std::vector<std::string>& paths);

/// In-place per-channel (x - mean) / std.
void normalize_channels(Dataset& ds, const std::vector<float>& mean, const std::vector<float>& std);

/// Per-sample horizontal flip (probability flip_prob) and reflective-pad-
/// then-crop by up to crop_pad pixels. Consumes from `rng`; identity when
/// flip_prob == 0 and crop_pad == 0.
Tensor augment(const Tensor& batch, Rng& rng, float flip_prob, int crop_pad);

struct TrainValSplit {
    Dataset train;
    Dataset val;
};

/// Stratified split: `val_fraction` of each class goes to val, seeded.
TrainValSplit split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed);

/// Copy rows `indices` into a batch tensor + labels.
void gather_batch(const Dataset& ds, const std::vector<int>& indices, Tensor& images,
                  std::vector<int>& labels);

/// Cache/restore datasets as SENETCKP tensor files (images + labels).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

} // namespace senet
