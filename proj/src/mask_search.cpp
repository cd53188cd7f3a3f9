// SPDX-License-Identifier: Apache-2.0
#include "senet/mask_search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "senet/trainer.hpp"

namespace senet {

DiffAccumulator DiffAccumulator::for_shapes(const std::vector<ReluShape>& shapes) {
    DiffAccumulator acc;
    for (const auto& s : shapes) {
        acc.layer_names.push_back(s.name);
        acc.sums.emplace_back(static_cast<std::size_t>(s.capacity()), 0.0);
    }
    return acc;
}

void DiffAccumulator::reset() {
    for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
    batches = 0;
}

ReluMask init_mask(const BudgetAllocation& alloc, const std::vector<ReluShape>& shapes,
                   Granularity granularity, std::uint64_t seed) {
    const auto report = validate_allocation(alloc, shapes);
    if (!report.ok) {
        throw ValidationError("init_mask: invalid allocation: " + report.violations.front());
    }
    Rng root = Rng(seed).substream("mask-init");
    ReluMask mask;
    mask.granularity = granularity;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        const ReluShape& s = shapes[l];
        MaskLayer layer;
        layer.name = s.name;
        layer.h = s.h;
        layer.w = s.w;
        layer.c = s.c;
        layer.bits.assign(static_cast<std::size_t>(s.capacity()), 0);
        Rng rng = root.substream(static_cast<std::uint64_t>(l));
        if (granularity == Granularity::Pixel) {
            const std::int64_t count = alloc.per_layer[l];
            // Partial Fisher-Yates over element indices.
            std::vector<std::int32_t> idx(static_cast<std::size_t>(s.capacity()));
            std::iota(idx.begin(), idx.end(), 0);
            for (std::int64_t i = 0; i < count; ++i) {
                const std::int64_t j =
                    i + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(s.capacity() - i)));
                std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
                layer.bits[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
            }
        } else {
            const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
            const std::int64_t rc = (alloc.per_layer[l] + hw - 1) / hw;   // ceil
            if (rc > s.c) {
                throw ValidationError("init_mask: layer '" + s.name + "' needs " + std::to_string(rc) +
                                      " channels, has " + std::to_string(s.c));
            }
            std::vector<std::int32_t> chans(static_cast<std::size_t>(s.c));
            std::iota(chans.begin(), chans.end(), 0);
            for (std::int64_t i = 0; i < rc; ++i) {
                const std::int64_t j =
                    i + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(s.c - i)));
                std::swap(chans[static_cast<std::size_t>(i)], chans[static_cast<std::size_t>(j)]);
                const std::int32_t ch = chans[static_cast<std::size_t>(i)];
                std::fill(layer.bits.begin() + static_cast<std::ptrdiff_t>(ch) * hw,
                          layer.bits.begin() + static_cast<std::ptrdiff_t>(ch + 1) * hw, 1);
            }
        }
        mask.layers.push_back(std::move(layer));
    }
    return mask;
}

void accumulate_diff(DiffAccumulator& acc, const std::vector<Var>& pr_maps,
                     const std::vector<Tensor>& ar_maps) {
    if (pr_maps.size() != acc.sums.size() || ar_maps.size() != acc.sums.size()) {
        throw ValidationError("accumulate_diff: map count mismatch");
    }
    for (std::size_t l = 0; l < pr_maps.size(); ++l) {
        const Tensor& pr = pr_maps[l]->value;
        const Tensor& ar = ar_maps[l];
        if (!pr.same_shape(ar)) {
            throw ValidationError("accumulate_diff: layer " + acc.layer_names[l] + " shape mismatch " +
                                  shape_str(pr.shape()) + " vs " + shape_str(ar.shape()));
        }
        const int n = pr.dim(0);
        const std::size_t per_sample = pr.numel() / static_cast<std::size_t>(n);
        if (per_sample != acc.sums[l].size()) {
            throw ValidationError("accumulate_diff: layer " + acc.layer_names[l] +
                                  " has unexpected map size");
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        double* sum = acc.sums[l].data();
        for (int s = 0; s < n; ++s) {
            const float* p = pr.data() + s * per_sample;
            const float* a = ar.data() + s * per_sample;
            for (std::size_t i = 0; i < per_sample; ++i) {
                sum[i] += std::abs(static_cast<double>(p[i]) - a[i]) * inv_n;
            }
        }
    }
    ++acc.batches;
}

ReluMask rerank_mask(const DiffAccumulator& acc, const BudgetAllocation& alloc,
                     const std::vector<ReluShape>& shapes, Granularity granularity) {
    if (acc.batches == 0) throw ValidationError("rerank_mask: no accumulated batches");
    ReluMask mask;
    mask.granularity = granularity;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        const ReluShape& s = shapes[l];
        MaskLayer layer;
        layer.name = s.name;
        layer.h = s.h;
        layer.w = s.w;
        layer.c = s.c;
        layer.bits.assign(static_cast<std::size_t>(s.capacity()), 0);
        const std::vector<double>& sums = acc.sums[l];
        if (granularity == Granularity::Pixel) {
            const std::size_t count = static_cast<std::size_t>(alloc.per_layer[l]);
            std::vector<std::int32_t> idx(sums.size());
            std::iota(idx.begin(), idx.end(), 0);
            auto better = [&](std::int32_t a, std::int32_t b) {
                const double da = sums[static_cast<std::size_t>(a)];
                const double db = sums[static_cast<std::size_t>(b)];
                if (da != db) return da > db;
                return a < b;   // ties: ascending flat index
            };
            if (count < idx.size()) {
                std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count),
                                 idx.end(), better);
            }
            for (std::size_t i = 0; i < count; ++i) {
                layer.bits[static_cast<std::size_t>(idx[i])] = 1;
            }
        } else {
            const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
            const std::int64_t rc = (alloc.per_layer[l] + hw - 1) / hw;
            std::vector<double> channel_mean(static_cast<std::size_t>(s.c), 0.0);
            for (int ch = 0; ch < s.c; ++ch) {
                double m = 0.0;
                for (std::int64_t i = 0; i < hw; ++i) {
                    m += sums[static_cast<std::size_t>(ch * hw + i)];
                }
                channel_mean[static_cast<std::size_t>(ch)] = m / static_cast<double>(hw);
            }
            std::vector<std::int32_t> chans(static_cast<std::size_t>(s.c));
            std::iota(chans.begin(), chans.end(), 0);
            std::sort(chans.begin(), chans.end(), [&](std::int32_t a, std::int32_t b) {
                const double da = channel_mean[static_cast<std::size_t>(a)];
                const double db = channel_mean[static_cast<std::size_t>(b)];
                if (da != db) return da > db;
                return a < b;
            });
            for (std::int64_t i = 0; i < rc && i < s.c; ++i) {
                const std::int32_t ch = chans[static_cast<std::size_t>(i)];
                std::fill(layer.bits.begin() + static_cast<std::ptrdiff_t>(ch) * hw,
                          layer.bits.begin() + static_cast<std::ptrdiff_t>(ch + 1) * hw, 1);
            }
        }
        mask.layers.push_back(std::move(layer));
    }
    return mask;
}

double mask_hamming_distance(const ReluMask& prev, const ReluMask& cur) {
    if (prev.layers.size() != cur.layers.size()) {
        throw ValidationError("hamming: mask layer counts differ");
    }
    std::int64_t moved = 0;
    std::int64_t prev_ones = 0;
    for (std::size_t l = 0; l < prev.layers.size(); ++l) {
        const MaskLayer& a = prev.layers[l];
        const MaskLayer& b = cur.layers[l];
        if (a.bits.size() != b.bits.size()) {
            throw ValidationError("hamming: layer '" + a.name + "' sizes differ");
        }
        if (a.ones() != b.ones()) {
            throw ValidationError("hamming: layer '" + a.name + "' ones counts differ (" +
                                  std::to_string(a.ones()) + " vs " + std::to_string(b.ones()) + ")");
        }
        prev_ones += a.ones();
        for (std::size_t i = 0; i < a.bits.size(); ++i) {
            moved += (a.bits[i] && !b.bits[i]) ? 1 : 0;
        }
    }
    if (prev_ones == 0) return 0.0;
    return static_cast<double>(moved) / static_cast<double>(prev_ones);
}

bool hamming_converged(const ReluMask& prev, const ReluMask& cur, double epsilon) {
    return mask_hamming_distance(prev, cur) < epsilon;
}

MaskSearchResult run_mask_search(Model& ar_model, const BudgetAllocation& alloc,
                                 const Dataset& train, const Dataset& val,
                                 const MaskSearchConfig& config) {
    if (train.size() == 0) throw ValidationError("mask search: empty dataset");
    const auto shapes = relu_shapes(ar_model.spec());
    MaskSearchConfig cfg = config;
    Rng root(cfg.seed);

    MaskSearchResult result;
    ReluMask current = init_mask(alloc, shapes, cfg.granularity, cfg.seed);

    Model pr = ar_model.clone();
    pr.bind_mask(&current);
    ops::Sgd opt({cfg.initial_lr, cfg.momentum, cfg.weight_decay});
    DiffAccumulator acc = DiffAccumulator::for_shapes(shapes);

    std::vector<int> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_learning_rate(lr_at(epoch, cfg.epochs, cfg.initial_lr));
        Rng erng = root.substream("stage2-epoch").substream(static_cast<std::uint64_t>(epoch));
        for (int i = train.size() - 1; i > 0; --i) {
            const int j = static_cast<int>(erng.next_below(static_cast<std::uint64_t>(i) + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        acc.reset();
        double loss_sum = 0.0;
        int batch_count = 0;
        Rng arng = root.substream("stage2-augment").substream(static_cast<std::uint64_t>(epoch));
        for (int start = 0; start < train.size(); start += cfg.batch_size) {
            const int end = std::min(train.size(), start + cfg.batch_size);
            std::vector<int> batch_idx(order.begin() + start, order.begin() + end);
            Tensor images;
            std::vector<int> labels;
            gather_batch(train, batch_idx, images, labels);
            images = augment(images, arng, cfg.flip_prob, cfg.crop_pad);

            ForwardResult teacher = ar_model.forward(images, 1.0, /*training=*/false);
            std::vector<Tensor> ar_maps;
            ar_maps.reserve(teacher.post_relu.size());
            for (const auto& v : teacher.post_relu) ar_maps.push_back(v->value);

            ForwardResult student = pr.forward(images, 1.0, /*training=*/true);
            Var ce = ops::ce_loss(student.logits, labels);
            Var kl = ops::kl_loss(teacher.logits->value, student.logits, cfg.rho);
            Var loss = ops::add(ops::scale(ce, 1.0f - cfg.lambda), ops::scale(kl, cfg.lambda));
            if (!std::isfinite(loss->value[0])) {
                throw RuntimeError("mask search diverged: non-finite loss at epoch " +
                                   std::to_string(epoch));
            }
            accumulate_diff(acc, student.post_relu, ar_maps);

            opt.zero_grad(pr.parameters());
            backward(loss);
            opt.step(pr.parameters());
            loss_sum += loss->value[0];
            ++batch_count;
        }

        ReluMask next = rerank_mask(acc, alloc, shapes, cfg.granularity);
        const double distance = mask_hamming_distance(current, next);
        current = std::move(next);   // storage address stays bound to the model

        const EvalResult ev = evaluate(pr, val, 1.0, cfg.batch_size);
        MaskSearchEpoch hist;
        hist.epoch = epoch;
        hist.hamming = distance;
        hist.train_loss = batch_count > 0 ? loss_sum / batch_count : 0.0;
        hist.val_accuracy = ev.accuracy;
        result.history.push_back(hist);

        if (result.history.size() == 1 || ev.accuracy > result.best_accuracy) {
            result.best_accuracy = ev.accuracy;
            result.best_epoch = epoch;
            result.best_snapshot = pr.to_checkpoint();
        }
        if (distance < cfg.epsilon) {
            result.converged = true;
            break;
        }
    }
    pr.bind_mask(nullptr);
    result.mask = std::move(current);
    return result;
}

} // namespace senet
