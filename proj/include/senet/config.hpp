// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "senet/arch.hpp"
#include "senet/data.hpp"
#include "senet/mask.hpp"
#include "senet/trainer.hpp"

namespace senet {

struct DatasetConfig {
    std::string kind = "synthetic";          // synthetic | cifar10
    // synthetic
    int classes = 4;
    int per_class = 500;
    int channels = 3, height = 16, width = 16;
    double difficulty = 0.5;
    // cifar10
    std::vector<std::string> train_files;
    std::string test_file;
    std::vector<float> normalize_mean;
    std::vector<float> normalize_std;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::string model_zoo;                   // zoo name, or
    std::string model_spec_path;             // explicit spec file (one of the two)
    DatasetConfig dataset;
    TrainConfig train;
    double budget_fraction = -1.0;           // one of fraction/count
    std::int64_t budget_count = -1;
    Granularity granularity = Granularity::Pixel;
    std::string kernel_backend = "scalar";   // scalar | avx2 | auto
    std::string cost_table_path;             // empty = shipped defaults

    void validate() const;
    ModelSpec resolve_model_spec() const;
    Dataset build_train_dataset() const;     // full training pool (pre val-split)
    Dataset build_test_dataset() const;      // synthetic: fresh seeded test pool
    std::int64_t resolve_budget(std::int64_t total_capacity) const;
};

/// Strict parse: unknown keys anywhere are hard errors. The SENET_SEED
/// environment variable, when set, overrides the config seed.
PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig pipeline_config_from_json_text(const std::string& text);
std::string pipeline_config_to_json_text(const PipelineConfig& config);

} // namespace senet
