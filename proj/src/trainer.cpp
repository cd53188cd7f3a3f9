// SPDX-License-Identifier: Apache-2.0
#include "senet/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "senet/checkpoint.hpp"

namespace senet {

void TrainConfig::validate() const {
    if (epochs_stage1 < 1 || epochs_stage2 < 1 || epochs_stage3 < 1) {
        throw ValidationError("config: epochs must be positive");
    }
    if (batch_size < 1) throw ValidationError("config: batch_size must be positive");
    if (lr_stage1 <= 0 || lr_stage2 <= 0 || lr_stage3 <= 0) {
        throw ValidationError("config: learning rates must be positive");
    }
    if (lambda < 0.0f || lambda > 1.0f) throw ValidationError("config: lambda must be in [0,1]");
    if (beta < 0.0f) throw ValidationError("config: beta must be >= 0");
    if (rho <= 0.0f) throw ValidationError("config: rho must be positive");
    if (epsilon < 0.0 || epsilon > 1.0) throw ValidationError("config: epsilon must be in [0,1]");
    if (proxy_density <= 0.0 || proxy_density >= 1.0) {
        throw ValidationError("config: proxy_density must be in (0,1)");
    }
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw ValidationError("config: val_fraction must be in [0,1)");
    }
    if (momentum < 0.0f || momentum >= 1.0f) throw ValidationError("config: momentum must be in [0,1)");
    if (weight_decay < 0.0f) throw ValidationError("config: weight_decay must be >= 0");
    if (dropout_rates.empty() || dropout_rates.back() != 1.0) {
        throw ValidationError("config: dropout_rates must end with 1.0");
    }
}

float lr_at(int epoch, int total_epochs, float initial_lr) {
    if (epoch < 0 || epoch >= total_epochs) {
        throw ValidationError("lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                              std::to_string(total_epochs) + ")");
    }
    // Boundaries at 62.5% = 5/8, 75% = 3/4, 87.5% = 7/8 completion.
    int decays = 0;
    if (8LL * epoch >= 5LL * total_epochs) ++decays;
    if (4LL * epoch >= 3LL * total_epochs) ++decays;
    if (8LL * epoch >= 7LL * total_epochs) ++decays;
    float lr = initial_lr;
    for (int i = 0; i < decays; ++i) lr *= 0.1f;
    return lr;
}

Var stage3_loss(Var ce, Var kl, Var pram, double d_r, float lambda, float beta) {
    Var loss = ops::add(ops::scale(ce, 1.0f - lambda), ops::scale(kl, lambda));
    if (d_r == 1.0 && pram != nullptr) {
        loss = ops::add(loss, ops::scale(pram, beta * 0.5f));
    }
    return loss;
}

EvalResult evaluate(Model& model, const Dataset& data, double d_r, int batch_size) {
    if (data.size() == 0) throw ValidationError("evaluate: empty dataset");
    model.rate_index(d_r);   // validates the rate
    EvalResult res;
    std::vector<std::int64_t> correct(static_cast<std::size_t>(data.classes), 0);
    std::vector<std::int64_t> count(static_cast<std::size_t>(data.classes), 0);
    std::vector<int> idx(static_cast<std::size_t>(batch_size));
    for (int start = 0; start < data.size(); start += batch_size) {
        const int end = std::min(data.size(), start + batch_size);
        idx.resize(static_cast<std::size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        Tensor images;
        std::vector<int> labels;
        gather_batch(data, idx, images, labels);
        ForwardResult fwd = model.forward(images, d_r, /*training=*/false);
        const Tensor& logits = fwd.logits->value;
        const int k = logits.dim(1);
        for (int s = 0; s < end - start; ++s) {
            const float* row = logits.data() + static_cast<std::size_t>(s) * k;
            int argmax = 0;
            for (int j = 1; j < k; ++j) {
                if (row[j] > row[argmax]) argmax = j;
            }
            const int label = labels[static_cast<std::size_t>(s)];
            ++count[static_cast<std::size_t>(label)];
            if (argmax == label) ++correct[static_cast<std::size_t>(label)];
        }
    }
    std::int64_t total_correct = 0;
    for (int c = 0; c < data.classes; ++c) {
        total_correct += correct[static_cast<std::size_t>(c)];
        res.per_class.push_back(count[static_cast<std::size_t>(c)] > 0
                                    ? static_cast<double>(correct[static_cast<std::size_t>(c)]) /
                                          static_cast<double>(count[static_cast<std::size_t>(c)])
                                    : 0.0);
    }
    res.accuracy = static_cast<double>(total_correct) / static_cast<double>(data.size());
    return res;
}

namespace {

std::vector<int> shuffled_order(int n, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    return order;
}

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const int n = logits.dim(0);
    const int k = logits.dim(1);
    int correct = 0;
    for (int s = 0; s < n; ++s) {
        const float* row = logits.data() + static_cast<std::size_t>(s) * k;
        int argmax = 0;
        for (int j = 1; j < k; ++j) {
            if (row[j] > row[argmax]) argmax = j;
        }
        if (argmax == labels[static_cast<std::size_t>(s)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace

Model train_ar(const ModelSpec& spec, const Dataset& train, const Dataset& val,
               const TrainConfig& config, MetricsSink* metrics) {
    config.validate();
    if (train.size() == 0) throw ValidationError("train_ar: empty dataset");
    ModelSpec sp = spec;
    sp.dropout_rates = config.dropout_rates;
    Model model = Model::build(sp, config.seed);
    ops::Sgd opt({config.lr_stage1, config.momentum, config.weight_decay});
    Rng root(config.seed);

    for (int epoch = 0; epoch < config.epochs_stage1; ++epoch) {
        opt.set_learning_rate(lr_at(epoch, config.epochs_stage1, config.lr_stage1));
        Rng erng = root.substream("stage1-epoch").substream(static_cast<std::uint64_t>(epoch));
        Rng arng = root.substream("stage1-augment").substream(static_cast<std::uint64_t>(epoch));
        std::vector<int> order = shuffled_order(train.size(), erng);
        double ce_sum = 0.0;
        double acc_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < train.size(); start += config.batch_size) {
            const int end = std::min(train.size(), start + config.batch_size);
            std::vector<int> batch_idx(order.begin() + start, order.begin() + end);
            Tensor images;
            std::vector<int> labels;
            gather_batch(train, batch_idx, images, labels);
            images = augment(images, arng, config.flip_prob, config.crop_pad);

            opt.zero_grad(model.parameters());
            double batch_ce = 0.0;
            for (double d_r : sp.dropout_rates) {
                ForwardResult fwd = model.forward(images, d_r, /*training=*/true);
                Var ce = ops::ce_loss(fwd.logits, labels);
                if (!std::isfinite(ce->value[0])) {
                    throw RuntimeError("train_ar diverged: non-finite loss at epoch " +
                                       std::to_string(epoch));
                }
                backward(ce);
                batch_ce += ce->value[0];
                if (d_r == 1.0) acc_sum += batch_accuracy(fwd.logits->value, labels);
            }
            opt.step(model.parameters());
            ce_sum += batch_ce;
            ++batches;
        }
        if (metrics != nullptr) {
            EpochMetrics em;
            em.epoch = epoch;
            em.stage = 1;
            em.d_r = 1.0;
            em.ce = batches > 0 ? ce_sum / batches : 0.0;
            em.train_accuracy = batches > 0 ? acc_sum / batches : 0.0;
            em.val_accuracy = val.size() > 0 ? evaluate(model, val, 1.0, config.batch_size).accuracy : 0.0;
            em.lr = opt.learning_rate();
            metrics->push_back(em);
        }
    }
    return model;
}

Model finetune_pr(Model& ar_model, const ReluMask& mask, const Checkpoint& stage2_snapshot,
                  const Dataset& train, const Dataset& val, const TrainConfig& config,
                  MetricsSink* metrics) {
    config.validate();
    if (train.size() == 0) throw ValidationError("finetune_pr: empty dataset");
    Model pr = ar_model.clone();
    if (!stage2_snapshot.empty()) {
        pr.load_state(stage2_snapshot);
    } else {
        std::cerr << "warning: no stage-2 snapshot; initializing PR model from AR weights\n";
    }
    pr.bind_mask(&mask);
    const std::vector<double>& rates = pr.spec().dropout_rates;
    ops::Sgd opt({config.lr_stage3, config.momentum, config.weight_decay});
    Rng root(config.seed);

    for (int epoch = 0; epoch < config.epochs_stage3; ++epoch) {
        opt.set_learning_rate(lr_at(epoch, config.epochs_stage3, config.lr_stage3));
        Rng erng = root.substream("stage3-epoch").substream(static_cast<std::uint64_t>(epoch));
        Rng arng = root.substream("stage3-augment").substream(static_cast<std::uint64_t>(epoch));
        std::vector<int> order = shuffled_order(train.size(), erng);
        double ce_sum = 0.0, kl_sum = 0.0, pram_sum = 0.0, acc_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < train.size(); start += config.batch_size) {
            const int end = std::min(train.size(), start + config.batch_size);
            std::vector<int> batch_idx(order.begin() + start, order.begin() + end);
            Tensor images;
            std::vector<int> labels;
            gather_batch(train, batch_idx, images, labels);
            images = augment(images, arng, config.flip_prob, config.crop_pad);

            opt.zero_grad(pr.parameters());
            // Alg.-2 loop: accumulate every rate's gradients, then one update.
            for (double d_r : rates) {
                ForwardResult teacher = ar_model.forward(images, d_r, /*training=*/false);
                ForwardResult student = pr.forward(images, d_r, /*training=*/true);
                Var ce = ops::ce_loss(student.logits, labels);
                Var kl = ops::kl_loss(teacher.logits->value, student.logits, config.rho);
                Var pram;
                if (d_r == 1.0) {
                    std::vector<Tensor> ar_maps;
                    ar_maps.reserve(teacher.post_relu.size());
                    for (const auto& v : teacher.post_relu) ar_maps.push_back(v->value);
                    pram = ops::pram_loss(student.post_relu, ar_maps);
                    pram_sum += pram->value[0];
                }
                Var loss = stage3_loss(ce, kl, pram, d_r, config.lambda, config.beta);
                if (!std::isfinite(loss->value[0])) {
                    throw RuntimeError("finetune diverged: non-finite loss at epoch " +
                                       std::to_string(epoch));
                }
                backward(loss);
                ce_sum += ce->value[0];
                kl_sum += kl->value[0];
                if (d_r == 1.0) acc_sum += batch_accuracy(student.logits->value, labels);
            }
            opt.step(pr.parameters());
            ++batches;
        }
        if (metrics != nullptr) {
            EpochMetrics em;
            em.epoch = epoch;
            em.stage = 3;
            em.d_r = 1.0;
            em.ce = batches > 0 ? ce_sum / batches : 0.0;
            em.kl = batches > 0 ? kl_sum / batches : 0.0;
            em.pram = batches > 0 ? pram_sum / batches : 0.0;
            em.train_accuracy = batches > 0 ? acc_sum / batches : 0.0;
            em.val_accuracy = val.size() > 0 ? evaluate(pr, val, 1.0, config.batch_size).accuracy : 0.0;
            em.lr = opt.learning_rate();
            metrics->push_back(em);
        }
    }
    pr.bind_mask(nullptr);
    return pr;
}

namespace {
std::string fmt_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}
} // namespace

void write_metrics_csv(const MetricsSink& metrics, const std::string& path) {
    std::ostringstream os;
    os << "epoch,stage,d_r,ce,kl,pram,train_acc,val_acc,lr\n";
    for (const auto& m : metrics) {
        os << m.epoch << ',' << m.stage << ',' << fmt_double(m.d_r) << ',' << fmt_double(m.ce) << ','
           << fmt_double(m.kl) << ',' << fmt_double(m.pram) << ',' << fmt_double(m.train_accuracy)
           << ',' << fmt_double(m.val_accuracy) << ',' << fmt_double(m.lr) << '\n';
    }
    const std::string text = os.str();
    write_file_atomic(path, text.data(), text.size());
}

} // namespace senet
