// SPDX-License-Identifier: Apache-2.0
#include "senet/cost.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "senet/checkpoint.hpp"

namespace senet {

using nlohmann::json;

void CostTable::validate() const {
    const double entries[] = {linear_runtime_us[0], linear_runtime_us[1], linear_comm_kb[0],
                              linear_comm_kb[1],    relu_runtime_us[0],  relu_runtime_us[1],
                              relu_comm_kb[0],      relu_comm_kb[1],     gc_size_kb};
    for (double e : entries) {
        if (e < 0.0 || !std::isfinite(e)) {
            throw ValidationError("cost table entries must be non-negative");
        }
    }
}

CostTable default_cost_table() {
    return CostTable{};
}

std::string cost_table_to_json_text(const CostTable& table) {
    json doc;
    doc["linear"] = {{"offline", {{"runtime_us", table.linear_runtime_us[0]},
                                  {"comm_kb", table.linear_comm_kb[0]}}},
                     {"online", {{"runtime_us", table.linear_runtime_us[1]},
                                 {"comm_kb", table.linear_comm_kb[1]}}}};
    doc["relu"] = {{"offline", {{"runtime_us", table.relu_runtime_us[0]},
                                {"comm_kb", table.relu_comm_kb[0]}}},
                   {"online", {{"runtime_us", table.relu_runtime_us[1]},
                               {"comm_kb", table.relu_comm_kb[1]}}},
                   {"gc_size_kb", table.gc_size_kb}};
    return doc.dump(2) + "\n";
}

CostTable cost_table_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("cost table: JSON parse error: ") + e.what());
    }
    CostTable t;
    try {
        t.linear_runtime_us[0] = doc.at("linear").at("offline").at("runtime_us").get<double>();
        t.linear_comm_kb[0] = doc.at("linear").at("offline").at("comm_kb").get<double>();
        t.linear_runtime_us[1] = doc.at("linear").at("online").at("runtime_us").get<double>();
        t.linear_comm_kb[1] = doc.at("linear").at("online").at("comm_kb").get<double>();
        t.relu_runtime_us[0] = doc.at("relu").at("offline").at("runtime_us").get<double>();
        t.relu_comm_kb[0] = doc.at("relu").at("offline").at("comm_kb").get<double>();
        t.relu_runtime_us[1] = doc.at("relu").at("online").at("runtime_us").get<double>();
        t.relu_comm_kb[1] = doc.at("relu").at("online").at("comm_kb").get<double>();
        t.gc_size_kb = doc.at("relu").at("gc_size_kb").get<double>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("cost table: ") + e.what());
    }
    t.validate();
    return t;
}

CostTable load_cost_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open cost table " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return cost_table_from_json_text(text);
}

void save_cost_table(const CostTable& table, const std::string& path) {
    const std::string text = cost_table_to_json_text(table);
    write_file_atomic(path, text.data(), text.size());
}

namespace {
int active_of(double d_r, int full) {
    const int ac = static_cast<int>(std::ceil(d_r * full - 1e-9));
    return std::min(full, std::max(1, ac));
}
} // namespace

OpCounts count_ops(const ModelSpec& spec, const ReluMask* mask, double d_r) {
    spec.validate();
    if (d_r <= 0.0 || d_r > 1.0) throw ValidationError("count_ops: d_r must be in (0,1]");
    const auto shapes = propagate_shapes(spec);
    OpCounts counts;
    std::string prev = "@input";
    std::map<std::string, int> active;
    active["@input"] = spec.in_channels;
    const std::string& last_name = spec.layers.back().name;

    for (const auto& l : spec.layers) {
        const std::string in_key = l.input.empty() ? prev : l.input;
        const LayerShape in = shapes.at(in_key);
        const int ai = active.at(in_key);
        LayerOpCount entry;
        entry.name = l.name;
        int aout = ai;
        switch (l.kind) {
            case LayerKind::Conv: {
                const LayerShape out = shapes.at(l.name);
                aout = active_of(d_r, l.out_channels);
                entry.macs = static_cast<std::int64_t>(l.kernel) * l.kernel * ai * aout * out.h * out.w;
                break;
            }
            case LayerKind::Linear: {
                aout = (l.name == last_name) ? l.features : active_of(d_r, l.features);
                entry.macs = static_cast<std::int64_t>(ai) * aout;
                break;
            }
            case LayerKind::Relu: {
                const LayerShape s = shapes.at(in_key);
                const std::int64_t hw = s.flat ? 1 : static_cast<std::int64_t>(s.h) * s.w;
                if (mask != nullptr) {
                    const MaskLayer* ml = mask->find(l.name);
                    if (ml == nullptr) {
                        throw ValidationError("count_ops: mask missing layer '" + l.name + "'");
                    }
                    if (static_cast<std::int64_t>(ml->bits.size()) != hw * s.c) {
                        throw ValidationError("count_ops: mask layer '" + l.name + "' size mismatch");
                    }
                    entry.relus = ml->ones_in_channel_prefix(ai);
                } else {
                    entry.relus = hw * ai;
                }
                break;
            }
            default:
                break;   // batchnorm, pool, residual-add, flatten: 0 MACs by convention
        }
        if (l.kind == LayerKind::Linear || l.kind == LayerKind::Conv) {
            active[l.name] = aout;
        } else if (l.kind == LayerKind::Flatten) {
            active[l.name] = ai * in.h * in.w;
        } else {
            active[l.name] = ai;
        }
        counts.macs += entry.macs;
        counts.relus += entry.relus;
        if (entry.macs > 0 || entry.relus > 0) counts.per_layer.push_back(entry);
        prev = l.name;
    }
    return counts;
}

double latency_us(std::int64_t n_mac, std::int64_t n_relu, const CostTable& table, Phase phase) {
    if (n_mac < 0 || n_relu < 0) throw ValidationError("latency: negative op count");
    const int p = phase == Phase::Offline ? 0 : 1;
    return static_cast<double>(n_mac) * table.linear_runtime_us[p] +
           static_cast<double>(n_relu) * table.relu_runtime_us[p];
}

double comm_kb(std::int64_t n_mac, std::int64_t n_relu, const CostTable& table, Phase phase) {
    if (n_mac < 0 || n_relu < 0) throw ValidationError("comm: negative op count");
    const int p = phase == Phase::Offline ? 0 : 1;
    return static_cast<double>(n_mac) * table.linear_comm_kb[p] +
           static_cast<double>(n_relu) * table.relu_comm_kb[p];
}

double gc_total_kb(std::int64_t n_relu, const CostTable& table) {
    return static_cast<double>(n_relu) * table.gc_size_kb;
}

CommSavings comm_savings(std::int64_t ar_relus, std::int64_t pr_relus) {
    CommSavings s;
    if (pr_relus <= 0) {
        s.infinite = true;
        s.ratio = std::numeric_limits<double>::infinity();
        return s;
    }
    s.ratio = static_cast<double>(ar_relus) / static_cast<double>(pr_relus);
    return s;
}

CostReport make_report(const OpCounts& counts, const CostTable& table) {
    CostReport r;
    r.n_mac = counts.macs;
    r.n_relu = counts.relus;
    r.per_layer = counts.per_layer;
    r.online_latency_us = latency_us(counts.macs, counts.relus, table, Phase::Online);
    r.offline_latency_us = latency_us(counts.macs, counts.relus, table, Phase::Offline);
    r.online_comm_kb = comm_kb(counts.macs, counts.relus, table, Phase::Online);
    r.offline_comm_kb = comm_kb(counts.macs, counts.relus, table, Phase::Offline);
    r.gc_kb = gc_total_kb(counts.relus, table);
    return r;
}

std::vector<SweepEntry> sweep(const ModelSpec& spec, const std::vector<std::int64_t>& budgets,
                              const CostTable& table, double d_r) {
    const OpCounts base = count_ops(spec, nullptr, d_r);
    std::vector<SweepEntry> entries;
    for (std::int64_t budget : budgets) {
        SweepEntry e;
        e.budget = budget;
        if (budget < 0 || budget > base.relus) {
            e.feasible = false;
            entries.push_back(e);
            continue;
        }
        OpCounts masked = base;
        masked.relus = budget;   // exact-budget mask assumption
        masked.per_layer.clear();
        e.report = make_report(masked, table);
        e.savings = comm_savings(base.relus, budget);
        entries.push_back(e);
    }
    return entries;
}

namespace {
std::string fmt(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}
} // namespace

std::string cost_report_csv(const CostReport& report, const CostTable& table) {
    std::ostringstream os;
    os << "layer,n_mac,n_relu,online_lat_us,offline_lat_us,online_kb,offline_kb,gc_kb\n";
    for (const auto& l : report.per_layer) {
        os << l.name << ',' << l.macs << ',' << l.relus << ','
           << fmt(latency_us(l.macs, l.relus, table, Phase::Online)) << ','
           << fmt(latency_us(l.macs, l.relus, table, Phase::Offline)) << ','
           << fmt(comm_kb(l.macs, l.relus, table, Phase::Online)) << ','
           << fmt(comm_kb(l.macs, l.relus, table, Phase::Offline)) << ','
           << fmt(gc_total_kb(l.relus, table)) << '\n';
    }
    os << "total," << report.n_mac << ',' << report.n_relu << ',' << fmt(report.online_latency_us)
       << ',' << fmt(report.offline_latency_us) << ',' << fmt(report.online_comm_kb) << ','
       << fmt(report.offline_comm_kb) << ',' << fmt(report.gc_kb) << '\n';
    os << "# residual adds and pooling contribute zero MACs\n";
    return os.str();
}

} // namespace senet
