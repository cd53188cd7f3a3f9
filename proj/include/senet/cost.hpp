// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "senet/arch.hpp"
#include "senet/mask.hpp"

namespace senet {

enum class Phase {
    Offline,
    Online,
};

/// Delphi-style per-operation costs. Loaded from JSON; the shipped default
/// carries the 15-bit fixed-point / 31-bit ReLU measurements.
struct CostTable {
    double linear_runtime_us[2] = {32.6, 0.248};      // [offline, online]
    double linear_comm_kb[2] = {0.095, 0.000563};
    double relu_runtime_us[2] = {154.9, 85.3};
    double relu_comm_kb[2] = {17.5, 2.048};
    double gc_size_kb = 17.5;

    void validate() const;
};

CostTable default_cost_table();
std::string cost_table_to_json_text(const CostTable& table);
CostTable cost_table_from_json_text(const std::string& text);
CostTable load_cost_table(const std::string& path);
void save_cost_table(const CostTable& table, const std::string& path);

struct LayerOpCount {
    std::string name;
    std::int64_t macs = 0;
    std::int64_t relus = 0;
};

struct OpCounts {
    std::int64_t macs = 0;
    std::int64_t relus = 0;
    std::vector<LayerOpCount> per_layer;
};

/// MAC/ReLU counts for one forward pass of a single sample. Conv MACs are
/// kh*kw*Cin*Cout*Hout*Wout with internal channels scaled by ceil(d_r * C);
/// linear MACs in*out. ReLUs count mask ones restricted to the active channel
/// prefix (full capacities when no mask). Residual adds and pooling cost 0
/// MACs.
OpCounts count_ops(const ModelSpec& spec, const ReluMask* mask, double d_r);

double latency_us(std::int64_t n_mac, std::int64_t n_relu, const CostTable& table, Phase phase);
double comm_kb(std::int64_t n_mac, std::int64_t n_relu, const CostTable& table, Phase phase);
double gc_total_kb(std::int64_t n_relu, const CostTable& table);

/// ReLU-communication savings ratio AR/PR; infinite (flagged) when PR has no
/// ReLUs.
struct CommSavings {
    double ratio = 1.0;
    bool infinite = false;
};
CommSavings comm_savings(std::int64_t ar_relus, std::int64_t pr_relus);

struct CostReport {
    std::int64_t n_mac = 0;
    std::int64_t n_relu = 0;
    double online_latency_us = 0.0;
    double offline_latency_us = 0.0;
    double online_comm_kb = 0.0;
    double offline_comm_kb = 0.0;
    double gc_kb = 0.0;
    std::vector<LayerOpCount> per_layer;
};

CostReport make_report(const OpCounts& counts, const CostTable& table);

struct SweepEntry {
    std::int64_t budget = 0;
    bool feasible = true;
    CostReport report;
    CommSavings savings;   // vs the unmasked model at the same d_r
};

/// One report per budget assuming an exact-budget mask (n_relu == budget).
std::vector<SweepEntry> sweep(const ModelSpec& spec, const std::vector<std::int64_t>& budgets,
                              const CostTable& table, double d_r = 1.0);

/// CSV: layer,n_mac,n_relu,online_lat_us,offline_lat_us,online_kb,offline_kb,gc_kb
/// plus a one-line totals summary and the zero-MAC footnote.
std::string cost_report_csv(const CostReport& report, const CostTable& table);

} // namespace senet
