// SPDX-License-Identifier: Apache-2.0
#include "senet/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "senet/checkpoint.hpp"

namespace senet {

void Dataset::validate() const {
    if (!images.defined() || images.rank() != 4) {
        throw ValidationError("dataset: images must be rank-4");
    }
    if (static_cast<int>(labels.size()) != images.dim(0)) {
        throw ValidationError("dataset: " + std::to_string(images.dim(0)) + " images vs " +
                              std::to_string(labels.size()) + " labels");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= classes) {
            throw ValidationError("dataset: label " + std::to_string(lab) + " outside [0," +
                                  std::to_string(classes) + ")");
        }
    }
}

namespace {

// Triangular wave on [0,1) -> [-1,1]; replaces trig so generation stays in
// fixed-width-friendly arithmetic.
float tri_wave(float t) {
    t -= static_cast<float>(static_cast<long long>(t));
    if (t < 0.0f) t += 1.0f;
    return t < 0.5f ? 4.0f * t - 1.0f : 3.0f - 4.0f * t;
}

float clamp01(float v) {
    return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
}

} // namespace

Dataset synth_generate(int classes, int per_class, int channels, int height, int width,
                       double difficulty, std::uint64_t seed) {
    if (classes < 2) throw ValidationError("synth_generate: need at least 2 classes");
    if (per_class < 1) throw ValidationError("synth_generate: per_class must be positive");
    if (difficulty < 0.0 || difficulty > 1.0) {
        throw ValidationError("synth_generate: difficulty must be in [0,1]");
    }
    const float diff = static_cast<float>(difficulty);
    // Difficulty fades the (linearly separable) color cue, shrinks the stripe
    // signal, and brings in noise, brightness jitter and a label-independent
    // distractor stripe field that the model must learn to ignore.
    const float color_strength = 0.38f * (1.0f - diff) * (1.0f - diff);
    const float stripe_amp = 0.20f - 0.08f * diff;
    const float noise_sigma = 0.02f + 0.30f * diff;
    const float distractor_amp = stripe_amp * diff;
    const float brightness_jitter = 0.12f * diff;

    const int n = classes * per_class;
    Dataset ds;
    ds.classes = classes;
    ds.images = Tensor({n, channels, height, width});
    ds.labels.resize(static_cast<std::size_t>(n));

    Rng root(seed);
    // Interleave classes, then shuffle sample order (labels stay attached).
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = root.substream("synth-shuffle");
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(shuffle_rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    const std::size_t plane = static_cast<std::size_t>(height) * width;
    const std::size_t sample_sz = static_cast<std::size_t>(channels) * plane;
    for (int slot = 0; slot < n; ++slot) {
        const int serial = order[static_cast<std::size_t>(slot)];
        const int k = serial % classes;
        ds.labels[static_cast<std::size_t>(slot)] = k;
        Rng rng = root.substream("synth-sample").substream(static_cast<std::uint64_t>(serial));

        // Class color: triangular-wave palette, channel-phase shifted.
        float color[4] = {0, 0, 0, 0};
        for (int c = 0; c < channels; ++c) {
            color[c & 3] = tri_wave(static_cast<float>(k) / static_cast<float>(classes) +
                                    static_cast<float>(c) / 3.0f);
        }
        // Relational class coding: the label is the (top-half, bottom-half)
        // stripe-orientation pair. Halves share marginal statistics across
        // classes, so telling them apart means binding orientation to
        // location — a deep-layer decision. Phases are random per half.
        const int dirs = classes <= 4 ? 2 : 4;
        const int top_dir = k % dirs;
        const int bottom_dir = (k / dirs) % dirs;
        const float freq = 3.0f + 2.5f * static_cast<float>((k / (dirs * dirs)) % 2) +
                           0.4f * (rng.next_float() - 0.5f);
        const float top_phase = rng.next_float();
        const float bottom_phase = rng.next_float();
        const float amp_jitter = 0.85f + 0.3f * rng.next_float();
        // Distractor: a checkerboard field (product of two waves), a texture
        // family distinct from every class stripe orientation.
        const float dfreq = rng.next_uniform(2.5f, 5.0f);
        const float dphase = rng.next_float();
        const float dphase2 = rng.next_float();
        const float brightness = brightness_jitter * (2.0f * rng.next_float() - 1.0f);

        auto wave_coord = [&](int d, int y, int x) {
            switch (d) {
                case 0: return static_cast<float>(y) / static_cast<float>(height);
                case 1: return static_cast<float>(x) / static_cast<float>(width);
                case 2: return static_cast<float>(x + y) / static_cast<float>(width + height);
                default: return static_cast<float>(x - y + height) / static_cast<float>(width + height);
            }
        };

        float* img = ds.images.data() + static_cast<std::size_t>(slot) * sample_sz;
        for (int y = 0; y < height; ++y) {
            const bool top = y < height / 2;
            const int dir = top ? top_dir : bottom_dir;
            const float phase = top ? top_phase : bottom_phase;
            for (int x = 0; x < width; ++x) {
                const float stripe =
                    tri_wave(wave_coord(dir, y, x) * freq + phase) * stripe_amp * amp_jitter;
                const float distract = tri_wave(wave_coord(0, y, x) * dfreq + dphase) *
                                       tri_wave(wave_coord(1, y, x) * dfreq + dphase2) *
                                       distractor_amp;
                for (int c = 0; c < channels; ++c) {
                    const float noise = rng.next_gaussian() * noise_sigma;
                    const float v = 0.5f + brightness + color_strength * color[c & 3] + stripe +
                                    distract + noise;
                    img[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * width + x] =
                        clamp01(v);
                }
            }
        }
    }
    return ds;
}

Dataset read_cifar10_binary(const std::string& path) {
    return read_cifar10_binary(std::vector<std::string>{path});
}

Dataset read_cifar10_binary(const std::vector<std::string>& paths) {
    constexpr int kRecord = 1 + 3072;
    std::vector<std::uint8_t> raw;
    for (const auto& p : paths) {
        auto bytes = read_file_bytes(p);
        if (bytes.size() % kRecord != 0) {
            const std::size_t offset = (bytes.size() / kRecord) * kRecord;
            throw ValidationError("cifar10: " + p + " truncated record at byte offset " +
                                  std::to_string(offset) + " (file size " + std::to_string(bytes.size()) +
                                  ", record size " + std::to_string(kRecord) + ")");
        }
        raw.insert(raw.end(), bytes.begin(), bytes.end());
    }
    const int n = static_cast<int>(raw.size()) / kRecord;
    if (n == 0) throw ValidationError("cifar10: no records");
    Dataset ds;
    ds.classes = 10;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::uint8_t* rec = raw.data() + static_cast<std::size_t>(i) * kRecord;
        const int label = rec[0];
        if (label > 9) {
            throw ValidationError("cifar10: label byte " + std::to_string(label) + " at record " +
                                  std::to_string(i));
        }
        ds.labels[static_cast<std::size_t>(i)] = label;
        float* dst = ds.images.data() + static_cast<std::size_t>(i) * 3072;
        for (int j = 0; j < 3072; ++j) {
            dst[j] = static_cast<float>(rec[1 + j]) / 255.0f;
        }
    }
    return ds;
}

void normalize_channels(Dataset& ds, const std::vector<float>& mean, const std::vector<float>& std) {
    const int c = ds.images.dim(1);
    if (static_cast<int>(mean.size()) != c || static_cast<int>(std.size()) != c) {
        throw ValidationError("normalize: expected " + std::to_string(c) + " mean/std entries");
    }
    const std::size_t plane = static_cast<std::size_t>(ds.images.dim(2)) * ds.images.dim(3);
    float* p = ds.images.data();
    for (int i = 0; i < ds.size(); ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const float m = mean[static_cast<std::size_t>(ch)];
            const float inv = 1.0f / std[static_cast<std::size_t>(ch)];
            for (std::size_t j = 0; j < plane; ++j) {
                *p = (*p - m) * inv;
                ++p;
            }
        }
    }
}

Tensor augment(const Tensor& batch, Rng& rng, float flip_prob, int crop_pad) {
    if (flip_prob == 0.0f && crop_pad == 0) return batch;
    const int n = batch.dim(0);
    const int c = batch.dim(1);
    const int h = batch.dim(2);
    const int w = batch.dim(3);
    Tensor out(batch.shape());
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    auto reflect = [](int i, int limit) {
        if (i < 0) i = -i;
        if (i >= limit) i = 2 * limit - 2 - i;
        return i;
    };

    for (int s = 0; s < n; ++s) {
        const bool flip = flip_prob > 0.0f && rng.next_float() < flip_prob;
        int oy = 0, ox = 0;
        if (crop_pad > 0) {
            oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * crop_pad + 1))) - crop_pad;
            ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * crop_pad + 1))) - crop_pad;
        }
        for (int ch = 0; ch < c; ++ch) {
            const float* src = batch.data() + (static_cast<std::size_t>(s) * c + ch) * plane;
            float* dst = out.data() + (static_cast<std::size_t>(s) * c + ch) * plane;
            for (int y = 0; y < h; ++y) {
                const int sy = reflect(y + oy, h);
                for (int x = 0; x < w; ++x) {
                    int sx = reflect(x + ox, w);
                    if (flip) sx = w - 1 - sx;
                    dst[static_cast<std::size_t>(y) * w + x] = src[static_cast<std::size_t>(sy) * w + sx];
                }
            }
        }
    }
    return out;
}

TrainValSplit split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw ValidationError("val_fraction must be in [0,1)");
    }
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.classes));
    for (int i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    Rng rng = Rng(seed).substream("val-split");
    std::vector<int> train_idx, val_idx;
    for (auto& idxs : by_class) {
        for (int i = static_cast<int>(idxs.size()) - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
            std::swap(idxs[static_cast<std::size_t>(i)], idxs[static_cast<std::size_t>(j)]);
        }
        const int n_val = static_cast<int>(static_cast<double>(idxs.size()) * val_fraction);
        for (std::size_t i = 0; i < idxs.size(); ++i) {
            (static_cast<int>(i) < n_val ? val_idx : train_idx).push_back(idxs[i]);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    auto subset = [&](const std::vector<int>& idx) {
        Dataset sub;
        sub.classes = ds.classes;
        std::vector<int> shape = ds.images.shape();
        shape[0] = static_cast<int>(idx.size());
        sub.images = Tensor(shape);
        sub.labels.resize(idx.size());
        const std::size_t sample = ds.images.numel() / static_cast<std::size_t>(ds.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::memcpy(sub.images.data() + i * sample,
                        ds.images.data() + static_cast<std::size_t>(idx[i]) * sample,
                        sample * sizeof(float));
            sub.labels[i] = ds.labels[static_cast<std::size_t>(idx[i])];
        }
        return sub;
    };
    return {subset(train_idx), subset(val_idx)};
}

void gather_batch(const Dataset& ds, const std::vector<int>& indices, Tensor& images,
                  std::vector<int>& labels) {
    std::vector<int> shape = ds.images.shape();
    shape[0] = static_cast<int>(indices.size());
    images = Tensor(shape);
    labels.resize(indices.size());
    const std::size_t sample = ds.images.numel() / static_cast<std::size_t>(ds.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::memcpy(images.data() + i * sample,
                    ds.images.data() + static_cast<std::size_t>(indices[i]) * sample,
                    sample * sizeof(float));
        labels[i] = ds.labels[static_cast<std::size_t>(indices[i])];
    }
}

void save_dataset(const Dataset& ds, const std::string& path) {
    Checkpoint ckpt;
    ckpt.add("images", ds.images);
    Tensor labels({ds.size()});
    for (int i = 0; i < ds.size(); ++i) labels.data()[i] = static_cast<float>(ds.labels[static_cast<std::size_t>(i)]);
    ckpt.add("labels", labels);
    ckpt.add("classes", Tensor::scalar(static_cast<float>(ds.classes)));
    save_checkpoint(ckpt, path);
}

Dataset load_dataset(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    const Tensor* images = ckpt.find("images");
    const Tensor* labels = ckpt.find("labels");
    const Tensor* classes = ckpt.find("classes");
    if (!images || !labels || !classes) {
        throw ValidationError("dataset file " + path + " missing images/labels/classes");
    }
    Dataset ds;
    ds.images = *images;
    ds.classes = static_cast<int>((*classes)[0]);
    ds.labels.resize(labels->numel());
    for (std::size_t i = 0; i < labels->numel(); ++i) ds.labels[i] = static_cast<int>((*labels)[i]);
    ds.validate();
    return ds;
}

} // namespace senet
