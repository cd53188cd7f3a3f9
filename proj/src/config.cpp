// SPDX-License-Identifier: Apache-2.0
#include "senet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "senet/zoo.hpp"

namespace senet {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ValidationError(where + ": unknown key '" + it.key() + "'");
        }
    }
}

} // namespace

void PipelineConfig::validate() const {
    if (model_zoo.empty() == model_spec_path.empty()) {
        throw ValidationError("config: exactly one of model.zoo / model.spec_path is required");
    }
    if ((budget_fraction < 0.0) == (budget_count < 0)) {
        throw ValidationError("config: exactly one of budget.fraction / budget.count is required");
    }
    if (budget_fraction >= 0.0 && budget_fraction > 1.0) {
        throw ValidationError("config: budget.fraction must be in [0,1]");
    }
    if (dataset.kind != "synthetic" && dataset.kind != "cifar10") {
        throw ValidationError("config: dataset.kind must be synthetic|cifar10");
    }
    if (dataset.kind == "cifar10" && dataset.train_files.empty()) {
        throw ValidationError("config: dataset.train_files required for cifar10");
    }
    train.validate();
}

ModelSpec PipelineConfig::resolve_model_spec() const {
    ModelSpec spec;
    if (!model_zoo.empty()) {
        spec = zoo::by_name(model_zoo, dataset.kind == "cifar10" ? 10 : dataset.classes,
                            train.dropout_rates);
    } else {
        spec = load_model_spec(model_spec_path);
        spec.dropout_rates = train.dropout_rates;
        spec.validate();
    }
    return spec;
}

Dataset PipelineConfig::build_train_dataset() const {
    if (dataset.kind == "synthetic") {
        return synth_generate(dataset.classes, dataset.per_class, dataset.channels, dataset.height,
                              dataset.width, dataset.difficulty, seed);
    }
    Dataset ds = read_cifar10_binary(dataset.train_files);
    if (!dataset.normalize_mean.empty()) {
        normalize_channels(ds, dataset.normalize_mean, dataset.normalize_std);
    }
    return ds;
}

Dataset PipelineConfig::build_test_dataset() const {
    if (dataset.kind == "synthetic") {
        // Independent pool: same distribution, disjoint seed stream.
        return synth_generate(dataset.classes, std::max(1, dataset.per_class / 4), dataset.channels,
                              dataset.height, dataset.width, dataset.difficulty,
                              Rng(seed).substream("test-pool").next_u64());
    }
    if (dataset.test_file.empty()) throw ValidationError("config: dataset.test_file required");
    Dataset ds = read_cifar10_binary(dataset.test_file);
    if (!dataset.normalize_mean.empty()) {
        normalize_channels(ds, dataset.normalize_mean, dataset.normalize_std);
    }
    return ds;
}

std::int64_t PipelineConfig::resolve_budget(std::int64_t total_capacity) const {
    if (budget_count >= 0) return budget_count;
    return static_cast<std::int64_t>(budget_fraction * static_cast<double>(total_capacity) + 0.5);
}

PipelineConfig pipeline_config_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: JSON parse error: ") + e.what());
    }
    check_keys(doc, {"seed", "model", "dataset", "train", "budget", "granularity", "kernel_backend",
                     "cost_table"},
               "config");
    PipelineConfig cfg;
    try {
        cfg.seed = doc.value("seed", std::uint64_t{1});
        if (doc.contains("model")) {
            const auto& jm = doc["model"];
            check_keys(jm, {"zoo", "spec_path"}, "config.model");
            cfg.model_zoo = jm.value("zoo", std::string());
            cfg.model_spec_path = jm.value("spec_path", std::string());
        }
        if (doc.contains("dataset")) {
            const auto& jd = doc["dataset"];
            check_keys(jd,
                       {"kind", "classes", "per_class", "resolution", "difficulty", "train_files",
                        "test_file", "normalize_mean", "normalize_std"},
                       "config.dataset");
            cfg.dataset.kind = jd.value("kind", std::string("synthetic"));
            cfg.dataset.classes = jd.value("classes", 4);
            cfg.dataset.per_class = jd.value("per_class", 500);
            if (jd.contains("resolution")) {
                const auto& res = jd["resolution"];
                if (!res.is_array() || res.size() != 3) {
                    throw ValidationError("config.dataset.resolution must be [C,H,W]");
                }
                cfg.dataset.channels = res[0].get<int>();
                cfg.dataset.height = res[1].get<int>();
                cfg.dataset.width = res[2].get<int>();
            }
            cfg.dataset.difficulty = jd.value("difficulty", 0.5);
            if (jd.contains("train_files")) {
                cfg.dataset.train_files = jd["train_files"].get<std::vector<std::string>>();
            }
            cfg.dataset.test_file = jd.value("test_file", std::string());
            if (jd.contains("normalize_mean")) {
                cfg.dataset.normalize_mean = jd["normalize_mean"].get<std::vector<float>>();
            }
            if (jd.contains("normalize_std")) {
                cfg.dataset.normalize_std = jd["normalize_std"].get<std::vector<float>>();
            }
        }
        if (doc.contains("train")) {
            const auto& jt = doc["train"];
            check_keys(jt,
                       {"epochs_stage1", "epochs_stage2", "epochs_stage3", "batch_size", "lr_stage1",
                        "lr_stage2", "lr_stage3", "momentum", "weight_decay", "lambda", "beta", "rho",
                        "epsilon", "proxy_density", "sensitivity_samples", "dropout_rates",
                        "val_fraction", "flip_prob", "crop_pad"},
                       "config.train");
            TrainConfig& t = cfg.train;
            t.epochs_stage1 = jt.value("epochs_stage1", t.epochs_stage1);
            t.epochs_stage2 = jt.value("epochs_stage2", t.epochs_stage2);
            t.epochs_stage3 = jt.value("epochs_stage3", t.epochs_stage3);
            t.batch_size = jt.value("batch_size", t.batch_size);
            t.lr_stage1 = jt.value("lr_stage1", t.lr_stage1);
            t.lr_stage2 = jt.value("lr_stage2", t.lr_stage2);
            t.lr_stage3 = jt.value("lr_stage3", t.lr_stage3);
            t.momentum = jt.value("momentum", t.momentum);
            t.weight_decay = jt.value("weight_decay", t.weight_decay);
            t.lambda = jt.value("lambda", t.lambda);
            t.beta = jt.value("beta", t.beta);
            t.rho = jt.value("rho", t.rho);
            t.epsilon = jt.value("epsilon", t.epsilon);
            t.proxy_density = jt.value("proxy_density", t.proxy_density);
            t.sensitivity_samples = jt.value("sensitivity_samples", t.sensitivity_samples);
            if (jt.contains("dropout_rates")) {
                t.dropout_rates = jt["dropout_rates"].get<std::vector<double>>();
            }
            t.val_fraction = jt.value("val_fraction", t.val_fraction);
            t.flip_prob = jt.value("flip_prob", t.flip_prob);
            t.crop_pad = jt.value("crop_pad", t.crop_pad);
        }
        if (doc.contains("budget")) {
            const auto& jb = doc["budget"];
            check_keys(jb, {"fraction", "count"}, "config.budget");
            if (jb.contains("fraction")) cfg.budget_fraction = jb["fraction"].get<double>();
            if (jb.contains("count")) cfg.budget_count = jb["count"].get<std::int64_t>();
        }
        cfg.granularity = granularity_from_name(doc.value("granularity", std::string("pixel")));
        cfg.kernel_backend = doc.value("kernel_backend", std::string("scalar"));
        cfg.cost_table_path = doc.value("cost_table", std::string());
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }

    if (const char* env_seed = std::getenv("SENET_SEED"); env_seed && *env_seed) {
        cfg.seed = std::strtoull(env_seed, nullptr, 10);
        cfg.train.seed = cfg.seed;
    } else {
        cfg.train.seed = cfg.seed;
    }
    cfg.validate();
    return cfg;
}

std::string pipeline_config_to_json_text(const PipelineConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    json jm;
    if (!cfg.model_zoo.empty()) jm["zoo"] = cfg.model_zoo;
    if (!cfg.model_spec_path.empty()) jm["spec_path"] = cfg.model_spec_path;
    doc["model"] = jm;
    json jd;
    jd["kind"] = cfg.dataset.kind;
    if (cfg.dataset.kind == "synthetic") {
        jd["classes"] = cfg.dataset.classes;
        jd["per_class"] = cfg.dataset.per_class;
        jd["resolution"] = {cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width};
        jd["difficulty"] = cfg.dataset.difficulty;
    } else {
        jd["train_files"] = cfg.dataset.train_files;
        jd["test_file"] = cfg.dataset.test_file;
        if (!cfg.dataset.normalize_mean.empty()) {
            jd["normalize_mean"] = cfg.dataset.normalize_mean;
            jd["normalize_std"] = cfg.dataset.normalize_std;
        }
    }
    doc["dataset"] = jd;
    const TrainConfig& t = cfg.train;
    doc["train"] = {{"epochs_stage1", t.epochs_stage1},
                    {"epochs_stage2", t.epochs_stage2},
                    {"epochs_stage3", t.epochs_stage3},
                    {"batch_size", t.batch_size},
                    {"lr_stage1", t.lr_stage1},
                    {"lr_stage2", t.lr_stage2},
                    {"lr_stage3", t.lr_stage3},
                    {"momentum", t.momentum},
                    {"weight_decay", t.weight_decay},
                    {"lambda", t.lambda},
                    {"beta", t.beta},
                    {"rho", t.rho},
                    {"epsilon", t.epsilon},
                    {"proxy_density", t.proxy_density},
                    {"sensitivity_samples", t.sensitivity_samples},
                    {"dropout_rates", t.dropout_rates},
                    {"val_fraction", t.val_fraction},
                    {"flip_prob", t.flip_prob},
                    {"crop_pad", t.crop_pad}};
    json jb;
    if (cfg.budget_count >= 0) {
        jb["count"] = cfg.budget_count;
    } else {
        jb["fraction"] = cfg.budget_fraction;
    }
    doc["budget"] = jb;
    doc["granularity"] = granularity_name(cfg.granularity);
    doc["kernel_backend"] = cfg.kernel_backend;
    if (!cfg.cost_table_path.empty()) doc["cost_table"] = cfg.cost_table_path;
    return doc.dump(2) + "\n";
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return pipeline_config_from_json_text(text);
}

} // namespace senet
