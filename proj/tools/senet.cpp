// SPDX-License-Identifier: Apache-2.0
// senet: end-to-end driver for ReLU-budgeted private-inference training.
//
// Subcommands wrap one pipeline step each (train-ar, sensitivity, allocate,
// search-mask, finetune, evaluate, cost, sweep); `pipeline` chains them with
// a resumable manifest. Exit codes: 0 success, 1 validation error, 2 runtime
// failure.

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "senet/allocator.hpp"
#include "senet/arch.hpp"
#include "senet/config.hpp"
#include "senet/cost.hpp"
#include "senet/data.hpp"
#include "senet/kernels.hpp"
#include "senet/manifest.hpp"
#include "senet/mask_search.hpp"
#include "senet/sensitivity.hpp"
#include "senet/trainer.hpp"
#include "senet/zoo.hpp"

namespace fs = std::filesystem;
using namespace senet;

namespace {

struct Workspace {
    PipelineConfig config;
    std::string workdir;

    std::string path(const std::string& name) const { return workdir + "/" + name; }
};

constexpr const char* kArCkpt = "ar.ckpt";
constexpr const char* kProfile = "profile.json";
constexpr const char* kAllocation = "allocation.json";
constexpr const char* kMask = "mask.msk";
constexpr const char* kStage2Ckpt = "stage2.ckpt";
constexpr const char* kPrCkpt = "pr.ckpt";
constexpr const char* kMetrics1 = "metrics_stage1.csv";
constexpr const char* kMetrics2 = "metrics_stage2.csv";
constexpr const char* kMetrics3 = "metrics_stage3.csv";
constexpr const char* kCostCsv = "cost.csv";
constexpr const char* kManifest = "manifest.json";

Workspace open_workspace(const std::string& config_path, const std::string& workdir,
                         const std::string& kernel_flag) {
    Workspace ws;
    ws.config = load_pipeline_config(config_path);
    ws.workdir = workdir;
    fs::create_directories(workdir);
    // Backend precedence: --kernel flag > SENET_KERNEL env > config value.
    std::string backend = ws.config.kernel_backend;
    if (const char* env = std::getenv("SENET_KERNEL"); env && *env) backend = env;
    if (!kernel_flag.empty()) backend = kernel_flag;
    kernels::set_backend(kernels::resolve_backend(backend.c_str()));
    return ws;
}

Model load_model_from(const Workspace& ws, const std::string& ckpt_name) {
    const ModelSpec spec = ws.config.resolve_model_spec();
    Model model = Model::build(spec, ws.config.seed);
    model.load_state(load_checkpoint(ws.path(ckpt_name)));
    return model;
}

struct StageData {
    Dataset train;
    Dataset val;
};

StageData stage_data(const Workspace& ws) {
    Dataset pool = ws.config.build_train_dataset();
    TrainValSplit split = split_train_val(pool, ws.config.train.val_fraction, ws.config.seed);
    return {std::move(split.train), std::move(split.val)};
}

void record_file(RunManifest& manifest, const Workspace& ws, const std::string& stage,
                 const std::string& name) {
    manifest.record(stage, name, name, hash_file(ws.path(name)));
}

// --- stage runners -------------------------------------------------------

void run_stage1(const Workspace& ws, RunManifest& manifest) {
    std::cout << "[stage1] training AR model\n";
    StageData data = stage_data(ws);
    MetricsSink metrics;
    const ModelSpec spec = ws.config.resolve_model_spec();
    Model ar = train_ar(spec, data.train, data.val, ws.config.train, &metrics);
    save_checkpoint(ar.to_checkpoint(), ws.path(kArCkpt));
    write_metrics_csv(metrics, ws.path(kMetrics1));
    record_file(manifest, ws, "stage1", kArCkpt);
    record_file(manifest, ws, "stage1", kMetrics1);
    const double acc = metrics.empty() ? 0.0 : metrics.back().val_accuracy;
    std::cout << "[stage1] done, final val accuracy " << acc << "\n";
}

void run_sensitivity(const Workspace& ws, RunManifest& manifest) {
    std::cout << "[sensitivity] scoring connections at the initialized model\n";
    StageData data = stage_data(ws);
    const ModelSpec spec = ws.config.resolve_model_spec();
    SensitivityProfile profile =
        compute_sensitivity_profile(spec, data.train, ws.config.train.proxy_density,
                                    ws.config.train.sensitivity_samples, ws.config.seed);
    save_profile(profile, ws.path(kProfile));
    record_file(manifest, ws, "sensitivity", kProfile);
    std::cout << "[sensitivity] wrote " << kProfile << "\n";
}

void run_allocate(const Workspace& ws, RunManifest& manifest) {
    const ModelSpec spec = ws.config.resolve_model_spec();
    const auto shapes = relu_shapes(spec);
    std::int64_t capacity = 0;
    for (const auto& s : shapes) capacity += s.capacity();
    const std::int64_t budget = ws.config.resolve_budget(capacity);
    std::cout << "[allocate] budget " << budget << " of capacity " << capacity << "\n";
    SensitivityProfile profile = load_profile(ws.path(kProfile));
    BudgetAllocation alloc = allocate_for_model(budget, profile, spec);
    const auto report = validate_allocation(alloc, shapes);
    if (!report.ok) {
        throw RuntimeError("allocation failed validation: " + report.violations.front());
    }
    save_allocation(alloc, ws.path(kAllocation));
    record_file(manifest, ws, "allocate", kAllocation);
}

void run_stage2(const Workspace& ws, RunManifest& manifest) {
    std::cout << "[stage2] searching ReLU mask\n";
    StageData data = stage_data(ws);
    Model ar = load_model_from(ws, kArCkpt);
    BudgetAllocation alloc = load_allocation(ws.path(kAllocation));

    MaskSearchConfig cfg;
    cfg.epochs = ws.config.train.epochs_stage2;
    cfg.batch_size = ws.config.train.batch_size;
    cfg.initial_lr = ws.config.train.lr_stage2;
    cfg.momentum = ws.config.train.momentum;
    cfg.weight_decay = ws.config.train.weight_decay;
    cfg.lambda = ws.config.train.lambda;
    cfg.rho = ws.config.train.rho;
    cfg.epsilon = ws.config.train.epsilon;
    cfg.granularity = ws.config.granularity;
    cfg.flip_prob = ws.config.train.flip_prob;
    cfg.crop_pad = ws.config.train.crop_pad;
    cfg.seed = ws.config.seed;

    MaskSearchResult result = run_mask_search(ar, alloc, data.train, data.val, cfg);
    save_mask(result.mask, ws.path(kMask));
    save_checkpoint(result.best_snapshot, ws.path(kStage2Ckpt));
    MetricsSink metrics;
    for (const auto& h : result.history) {
        EpochMetrics em;
        em.epoch = h.epoch;
        em.stage = 2;
        em.d_r = 1.0;
        em.ce = h.train_loss;
        em.kl = h.hamming;   // hamming distance logged in the kl column for stage 2
        em.val_accuracy = h.val_accuracy;
        metrics.push_back(em);
    }
    write_metrics_csv(metrics, ws.path(kMetrics2));
    record_file(manifest, ws, "stage2", kMask);
    record_file(manifest, ws, "stage2", kStage2Ckpt);
    record_file(manifest, ws, "stage2", kMetrics2);
    std::cout << "[stage2] " << (result.converged ? "converged" : "epoch limit") << ", best val acc "
              << result.best_accuracy << " at epoch " << result.best_epoch << "\n";
}

void run_stage3(const Workspace& ws, RunManifest& manifest) {
    std::cout << "[stage3] fine-tuning PR model\n";
    StageData data = stage_data(ws);
    Model ar = load_model_from(ws, kArCkpt);
    ReluMask mask = load_mask(ws.path(kMask));
    Checkpoint snapshot = load_checkpoint(ws.path(kStage2Ckpt));
    MetricsSink metrics;
    Model pr = finetune_pr(ar, mask, snapshot, data.train, data.val, ws.config.train, &metrics);
    save_checkpoint(pr.to_checkpoint(), ws.path(kPrCkpt));
    write_metrics_csv(metrics, ws.path(kMetrics3));
    record_file(manifest, ws, "stage3", kPrCkpt);
    record_file(manifest, ws, "stage3", kMetrics3);
    const double acc = metrics.empty() ? 0.0 : metrics.back().val_accuracy;
    std::cout << "[stage3] done, final val accuracy " << acc << "\n";
}

CostTable table_for(const Workspace& ws) {
    if (!ws.config.cost_table_path.empty()) return load_cost_table(ws.config.cost_table_path);
    return default_cost_table();
}

void print_cost_summary(const char* tag, const CostReport& r) {
    std::cout << tag << ": n_mac=" << r.n_mac << " n_relu=" << r.n_relu
              << " online_latency_us=" << r.online_latency_us
              << " offline_latency_us=" << r.offline_latency_us
              << " online_comm_kb=" << r.online_comm_kb << " offline_comm_kb=" << r.offline_comm_kb
              << " gc_kb=" << r.gc_kb << "\n";
}

void run_cost_stage(const Workspace& ws, RunManifest& manifest) {
    std::cout << "[cost] building report\n";
    const ModelSpec spec = ws.config.resolve_model_spec();
    const CostTable table = table_for(ws);
    ReluMask mask = load_mask(ws.path(kMask));
    const OpCounts ar_counts = count_ops(spec, nullptr, 1.0);
    const OpCounts pr_counts = count_ops(spec, &mask, 1.0);
    const CostReport pr_report = make_report(pr_counts, table);
    const std::string csv = cost_report_csv(pr_report, table);
    write_file_atomic(ws.path(kCostCsv), csv.data(), csv.size());
    record_file(manifest, ws, "cost", kCostCsv);
    print_cost_summary("ar", make_report(ar_counts, table));
    for (double d_r : spec.dropout_rates) {
        const OpCounts c = count_ops(spec, &mask, d_r);
        std::cout << "pr d_r=" << d_r << ": n_relu=" << c.relus << " n_mac=" << c.macs << "\n";
    }
    print_cost_summary("pr", pr_report);
    const CommSavings s = comm_savings(ar_counts.relus, pr_counts.relus);
    if (s.infinite) {
        std::cout << "comm_savings=inf (PR model has no ReLUs)\n";
    } else {
        std::cout << "comm_savings=" << s.ratio << "\n";
    }
}

int run_pipeline(const std::string& config_path, const std::string& workdir,
                 const std::string& kernel_flag, bool resume) {
    Workspace ws = open_workspace(config_path, workdir, kernel_flag);
    WorkdirLock lock(ws.workdir);

    const std::string snapshot = pipeline_config_to_json_text(ws.config);
    RunManifest manifest;
    const std::string manifest_path = ws.path(kManifest);
    if (resume && fs::exists(manifest_path)) {
        manifest = load_manifest(manifest_path);
        if (manifest.config_snapshot != snapshot) {
            throw ValidationError("--resume: config differs from the manifest's snapshot");
        }
    } else {
        manifest.run_id = make_run_id(snapshot, ws.config.seed);
        manifest.config_snapshot = snapshot;
        manifest.seed = ws.config.seed;
    }

    struct Step {
        const char* name;
        void (*run)(const Workspace&, RunManifest&);
    };
    const Step steps[] = {
        {"stage1", run_stage1},   {"sensitivity", run_sensitivity}, {"allocate", run_allocate},
        {"stage2", run_stage2},   {"stage3", run_stage3},           {"cost", run_cost_stage},
    };
    bool upstream_rerun = false;
    for (const Step& step : steps) {
        const bool valid = resume && !upstream_rerun && manifest.stage_valid(step.name, ws.workdir);
        if (valid) {
            std::cout << "[" << step.name << "] up to date, skipping\n";
            continue;
        }
        upstream_rerun = true;   // stages downstream of a rerun are rerun too
        manifest.stages.erase(step.name);
        step.run(ws, manifest);
        save_manifest(manifest, manifest_path);
    }
    save_manifest(manifest, manifest_path);
    std::cout << "pipeline complete; manifest at " << manifest_path << "\n";
    return 0;
}

ModelSpec spec_from_flags(const std::string& spec_path, const std::string& zoo_name, int classes,
                          const std::vector<double>& rates) {
    if (spec_path.empty() == zoo_name.empty()) {
        throw ValidationError("exactly one of --spec / --zoo is required");
    }
    if (!spec_path.empty()) {
        ModelSpec spec = load_model_spec(spec_path);
        if (!rates.empty()) {
            spec.dropout_rates = rates;
            spec.validate();
        }
        return spec;
    }
    return zoo::by_name(zoo_name, classes, rates.empty() ? std::vector<double>{1.0} : rates);
}

std::vector<std::int64_t> parse_budgets(const std::string& arg) {
    std::vector<std::int64_t> budgets;
    std::string tok;
    for (char ch : arg + ",") {
        if (ch == ',') {
            if (!tok.empty()) budgets.push_back(std::stoll(tok));
            tok.clear();
        } else {
            tok += ch;
        }
    }
    if (budgets.empty()) throw ValidationError("--budgets: no values parsed");
    return budgets;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SENet-style ReLU budgeting, mask search and PI cost modeling"};
    app.require_subcommand(1);

    std::string config_path, workdir = ".", kernel_flag;
    bool resume = false;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config) {
            cmd->add_option("--config", config_path, "pipeline config JSON")->required();
        }
        cmd->add_option("--workdir", workdir, "artifact directory (default: cwd)");
        cmd->add_option("--kernel", kernel_flag, "kernel backend: scalar|avx2|auto");
    };

    auto* cmd_pipeline = app.add_subcommand("pipeline", "run all stages");
    add_common(cmd_pipeline, true);
    cmd_pipeline->add_flag("--resume", resume, "skip stages whose artifacts validate");

    auto* cmd_train_ar = app.add_subcommand("train-ar", "stage 1: train the all-ReLU model");
    add_common(cmd_train_ar, true);

    auto* cmd_sens = app.add_subcommand("sensitivity", "compute the sensitivity profile");
    add_common(cmd_sens, true);

    auto* cmd_alloc = app.add_subcommand("allocate", "allocate the ReLU budget per layer");
    std::string alloc_profile, alloc_spec, alloc_out = "allocation.json";
    std::int64_t alloc_budget = -1;
    cmd_alloc->add_option("--budget", alloc_budget, "global ReLU budget");
    cmd_alloc->add_option("--profile", alloc_profile, "sensitivity profile JSON");
    cmd_alloc->add_option("--spec", alloc_spec, "model spec JSON");
    cmd_alloc->add_option("--out", alloc_out, "output path");
    cmd_alloc->add_option("--config", config_path, "pipeline config (workdir mode)");
    cmd_alloc->add_option("--workdir", workdir, "artifact directory");
    cmd_alloc->add_option("--kernel", kernel_flag, "kernel backend");

    auto* cmd_mask = app.add_subcommand("search-mask", "stage 2: identify ReLU locations");
    add_common(cmd_mask, true);

    auto* cmd_ft = app.add_subcommand("finetune", "stage 3: distillation fine-tuning");
    add_common(cmd_ft, true);

    auto* cmd_eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(cmd_eval, true);
    std::string eval_ckpt = kPrCkpt, eval_split = "test";
    double eval_dr = 1.0;
    cmd_eval->add_option("--ckpt", eval_ckpt, "checkpoint file (relative to workdir)");
    cmd_eval->add_option("--dr", eval_dr, "dropout rate to evaluate");
    cmd_eval->add_option("--split", eval_split, "test|val|train");
    bool eval_masked = true;
    cmd_eval->add_flag("--no-mask,!--mask", eval_masked, "evaluate without the stage-2 mask");

    auto* cmd_cost = app.add_subcommand("cost", "MAC/ReLU counts and PI cost estimates");
    std::string cost_spec, cost_zoo, cost_mask, cost_table, cost_out;
    int cost_classes = 10;
    double cost_dr = 1.0;
    cmd_cost->add_option("--spec", cost_spec, "model spec JSON");
    cmd_cost->add_option("--zoo", cost_zoo, "zoo model name");
    cmd_cost->add_option("--classes", cost_classes, "class count for --zoo");
    cmd_cost->add_option("--mask", cost_mask, "mask file");
    cmd_cost->add_option("--dr", cost_dr, "dropout rate");
    cmd_cost->add_option("--table", cost_table, "cost table JSON (default: shipped Delphi numbers)");
    cmd_cost->add_option("--out", cost_out, "write per-layer CSV here");

    auto* cmd_sweep = app.add_subcommand("sweep", "cost reports across ReLU budgets");
    std::string sweep_spec, sweep_zoo, sweep_table, sweep_out, sweep_budgets;
    int sweep_classes = 10;
    double sweep_dr = 1.0;
    cmd_sweep->add_option("--spec", sweep_spec, "model spec JSON");
    cmd_sweep->add_option("--zoo", sweep_zoo, "zoo model name");
    cmd_sweep->add_option("--classes", sweep_classes, "class count for --zoo");
    cmd_sweep->add_option("--budgets", sweep_budgets, "comma-separated budgets")->required();
    cmd_sweep->add_option("--table", sweep_table, "cost table JSON");
    cmd_sweep->add_option("--out", sweep_out, "write CSV here");
    cmd_sweep->add_option("--dr", sweep_dr, "dropout rate");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_pipeline->parsed()) {
            return run_pipeline(config_path, workdir, kernel_flag, resume);
        }
        if (cmd_train_ar->parsed() || cmd_sens->parsed() || cmd_mask->parsed() || cmd_ft->parsed()) {
            Workspace ws = open_workspace(config_path, workdir, kernel_flag);
            WorkdirLock lock(ws.workdir);
            RunManifest manifest;
            const std::string manifest_path = ws.path(kManifest);
            if (fs::exists(manifest_path)) {
                manifest = load_manifest(manifest_path);
            } else {
                const std::string snapshot = pipeline_config_to_json_text(ws.config);
                manifest.run_id = make_run_id(snapshot, ws.config.seed);
                manifest.config_snapshot = snapshot;
                manifest.seed = ws.config.seed;
            }
            if (cmd_train_ar->parsed()) {
                run_stage1(ws, manifest);
            } else if (cmd_sens->parsed()) {
                run_sensitivity(ws, manifest);
            } else if (cmd_mask->parsed()) {
                for (const char* need : {kArCkpt, kAllocation}) {
                    if (!fs::exists(ws.path(need))) {
                        throw ValidationError(std::string("missing prerequisite artifact ") + need);
                    }
                }
                run_stage2(ws, manifest);
            } else {
                for (const char* need : {kArCkpt, kMask, kStage2Ckpt}) {
                    if (!fs::exists(ws.path(need))) {
                        throw ValidationError(std::string("missing prerequisite artifact ") + need);
                    }
                }
                run_stage3(ws, manifest);
            }
            save_manifest(manifest, manifest_path);
            return 0;
        }
        if (cmd_alloc->parsed()) {
            if (!alloc_profile.empty() || !alloc_spec.empty()) {
                if (alloc_budget < 0) throw ValidationError("allocate: --budget is required");
                if (alloc_profile.empty() || alloc_spec.empty()) {
                    throw ValidationError("allocate: --profile and --spec are both required");
                }
                const ModelSpec spec = load_model_spec(alloc_spec);
                const SensitivityProfile profile = load_profile(alloc_profile);
                BudgetAllocation alloc = allocate_for_model(alloc_budget, profile, spec);
                save_allocation(alloc, alloc_out);
                std::cout << "wrote " << alloc_out << " (budget " << alloc.budget << ")\n";
                return 0;
            }
            if (config_path.empty()) {
                throw ValidationError("allocate: either --profile/--spec/--budget or --config");
            }
            Workspace ws = open_workspace(config_path, workdir, kernel_flag);
            WorkdirLock lock(ws.workdir);
            RunManifest manifest;
            const std::string manifest_path = ws.path(kManifest);
            if (fs::exists(manifest_path)) manifest = load_manifest(manifest_path);
            if (!fs::exists(ws.path(kProfile))) {
                throw ValidationError(std::string("missing prerequisite artifact ") + kProfile);
            }
            run_allocate(ws, manifest);
            save_manifest(manifest, manifest_path);
            return 0;
        }
        if (cmd_eval->parsed()) {
            Workspace ws = open_workspace(config_path, workdir, kernel_flag);
            Model model = load_model_from(ws, eval_ckpt);
            ReluMask mask;
            if (eval_masked && fs::exists(ws.path(kMask))) {
                mask = load_mask(ws.path(kMask));
                model.bind_mask(&mask);
            }
            Dataset data;
            if (eval_split == "test") {
                data = ws.config.build_test_dataset();
            } else {
                StageData sd = stage_data(ws);
                data = (eval_split == "val") ? std::move(sd.val) : std::move(sd.train);
            }
            const EvalResult res = evaluate(model, data, eval_dr, ws.config.train.batch_size);
            std::cout << "accuracy=" << res.accuracy << " (split=" << eval_split << ", d_r=" << eval_dr
                      << ", n=" << data.size() << ")\n";
            for (std::size_t c = 0; c < res.per_class.size(); ++c) {
                std::cout << "class_" << c << "_accuracy=" << res.per_class[c] << "\n";
            }
            return 0;
        }
        if (cmd_cost->parsed()) {
            const ModelSpec spec = spec_from_flags(cost_spec, cost_zoo, cost_classes, {});
            const CostTable table = cost_table.empty() ? default_cost_table() : load_cost_table(cost_table);
            ReluMask mask;
            const ReluMask* mask_ptr = nullptr;
            if (!cost_mask.empty()) {
                mask = load_mask(cost_mask);
                mask_ptr = &mask;
            }
            const OpCounts counts = count_ops(spec, mask_ptr, cost_dr);
            const CostReport report = make_report(counts, table);
            if (!cost_out.empty()) {
                const std::string csv = cost_report_csv(report, table);
                write_file_atomic(cost_out, csv.data(), csv.size());
            }
            print_cost_summary("total", report);
            return 0;
        }
        if (cmd_sweep->parsed()) {
            const ModelSpec spec = spec_from_flags(sweep_spec, sweep_zoo, sweep_classes, {});
            const CostTable table = sweep_table.empty() ? default_cost_table() : load_cost_table(sweep_table);
            const auto entries = sweep(spec, parse_budgets(sweep_budgets), table, sweep_dr);
            std::string csv = "budget,feasible,n_mac,n_relu,online_lat_us,offline_lat_us,online_kb,"
                              "offline_kb,gc_kb,savings\n";
            for (const auto& e : entries) {
                if (!e.feasible) {
                    std::cout << "budget=" << e.budget << " infeasible\n";
                    csv += std::to_string(e.budget) + ",0,,,,,,,,\n";
                    continue;
                }
                std::cout << "budget=" << e.budget << " online_latency_us=" << e.report.online_latency_us
                          << " savings=" << e.savings.ratio << "\n";
                csv += std::to_string(e.budget) + ",1," + std::to_string(e.report.n_mac) + "," +
                       std::to_string(e.report.n_relu) + "," + std::to_string(e.report.online_latency_us) +
                       "," + std::to_string(e.report.offline_latency_us) + "," +
                       std::to_string(e.report.online_comm_kb) + "," +
                       std::to_string(e.report.offline_comm_kb) + "," + std::to_string(e.report.gc_kb) +
                       "," + std::to_string(e.savings.ratio) + "\n";
            }
            if (!sweep_out.empty()) {
                write_file_atomic(sweep_out, csv.data(), csv.size());
            }
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
