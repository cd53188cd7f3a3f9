// SPDX-License-Identifier: Apache-2.0
#include "senet/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "senet/checkpoint.hpp"

namespace senet {

using nlohmann::json;

std::int64_t BudgetAllocation::total() const {
    std::int64_t t = 0;
    for (auto v : per_layer) t += v;
    return t;
}

BudgetAllocation allocate(std::int64_t budget, const std::vector<double>& eta_hat,
                          const std::vector<std::int64_t>& capacities,
                          const std::vector<std::string>* names) {
    const std::size_t n = capacities.size();
    if (eta_hat.size() != n) {
        throw ValidationError("allocate: " + std::to_string(eta_hat.size()) + " sensitivities vs " +
                              std::to_string(n) + " capacities");
    }
    if (n == 0) throw ValidationError("allocate: no layers");
    std::int64_t cap_sum = 0;
    for (std::size_t l = 0; l < n; ++l) {
        if (capacities[l] < 0) throw ValidationError("allocate: negative capacity");
        cap_sum += capacities[l];
    }
    if (budget < 0) throw ValidationError("allocate: negative budget");
    if (budget > cap_sum) {
        throw ValidationError("allocate: budget " + std::to_string(budget) +
                              " exceeds total capacity " + std::to_string(cap_sum));
    }
    double hat_sum = 0.0;
    for (double h : eta_hat) {
        if (h < 0.0 || !std::isfinite(h)) throw ValidationError("allocate: eta_hat entries must be >= 0");
        hat_sum += h;
    }
    if (std::abs(hat_sum - 1.0) > 1e-6) {
        throw ValidationError("allocate: eta_hat sums to " + std::to_string(hat_sum) + ", expected 1");
    }

    std::vector<double> hat = eta_hat;
    std::vector<int> active(n, 1);
    std::vector<std::int64_t> final(n, 0);
    std::int64_t total = 0;

    auto renormalize = [&]() {
        double s = 0.0;
        for (std::size_t l = 0; l < n; ++l) {
            if (active[l]) s += hat[l];
        }
        if (s > 0.0) {
            for (std::size_t l = 0; l < n; ++l) {
                if (active[l]) hat[l] /= s;
            }
        } else {
            // Zero-sensitivity survivors: spread evenly so the loop advances.
            int n_active = 0;
            for (std::size_t l = 0; l < n; ++l) n_active += active[l];
            for (std::size_t l = 0; l < n; ++l) {
                if (active[l]) hat[l] = 1.0 / n_active;
            }
        }
    };

    // Assignment passes.
    std::int64_t last_remaining = budget;
    while (total < budget) {
        const std::int64_t remaining = budget - total;
        last_remaining = remaining;
        bool saturated_this_pass = false;
        bool any_active = false;
        for (std::size_t l = 0; l < n; ++l) {
            if (!active[l]) continue;
            any_active = true;
            std::int64_t grant =
                static_cast<std::int64_t>(std::floor(static_cast<double>(remaining) * hat[l]));
            if (grant < 1) grant = 1;   // progress guarantee for tiny remainders
            const std::int64_t free = capacities[l] - final[l];
            if (grant >= free) {
                grant = free;
                active[l] = 0;
                saturated_this_pass = true;
            }
            final[l] += grant;
            total += grant;
        }
        if (!any_active) break;   // everything saturated; budget <= cap_sum keeps this safe
        if (saturated_this_pass) renormalize();
    }

    // Removal pass: strip the overshoot from the least-sensitive layers first
    // (ties resolved toward the later layer).
    const std::int64_t r_total = total;
    std::int64_t r_remove = total - budget;
    const std::int64_t removed = r_remove;
    if (r_remove > 0) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (eta_hat[a] != eta_hat[b]) return eta_hat[a] < eta_hat[b];
            return a > b;
        });
        while (r_remove > 0) {
            for (std::size_t k = 0; k < n && r_remove > 0; ++k) {
                const std::size_t l = order[k];
                if (final[l] > 0) {
                    --final[l];
                    --r_remove;
                }
            }
        }
    }

    BudgetAllocation alloc;
    alloc.budget = budget;
    alloc.per_layer = std::move(final);
    alloc.capacities = capacities;
    alloc.active = std::move(active);
    alloc.r_total = r_total;
    alloc.r_remove = removed;
    alloc.r_remain = last_remaining;
    if (names != nullptr) {
        if (names->size() != n) throw ValidationError("allocate: name count mismatch");
        alloc.layer_names = *names;
    } else {
        for (std::size_t l = 0; l < n; ++l) alloc.layer_names.push_back("layer" + std::to_string(l));
    }
    return alloc;
}

BudgetAllocation allocate_for_model(std::int64_t budget, const SensitivityProfile& profile,
                                    const ModelSpec& spec) {
    const auto shapes = relu_shapes(spec);
    if (shapes.size() != profile.layers.size()) {
        throw ValidationError("allocate: profile has " + std::to_string(profile.layers.size()) +
                              " layers, model has " + std::to_string(shapes.size()) + " ReLU layers");
    }
    std::vector<double> hat;
    std::vector<std::int64_t> caps;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i].name != profile.layers[i].relu_layer) {
            throw ValidationError("allocate: profile layer '" + profile.layers[i].relu_layer +
                                  "' does not match model ReLU layer '" + shapes[i].name + "'");
        }
        hat.push_back(profile.layers[i].eta_hat);
        caps.push_back(shapes[i].capacity());
        names.push_back(shapes[i].name);
    }
    return allocate(budget, hat, caps, &names);
}

BudgetAllocation allocate_uniform(std::int64_t budget, const std::vector<std::int64_t>& capacities,
                                  const std::vector<std::string>* names) {
    std::int64_t cap_sum = 0;
    for (auto c : capacities) cap_sum += c;
    if (budget < 0 || budget > cap_sum) {
        throw ValidationError("allocate_uniform: infeasible budget " + std::to_string(budget));
    }
    const std::size_t n = capacities.size();
    std::vector<std::int64_t> final(n, 0);
    std::int64_t total = 0;
    const double frac = cap_sum > 0 ? static_cast<double>(budget) / static_cast<double>(cap_sum) : 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        final[l] = static_cast<std::int64_t>(std::floor(frac * static_cast<double>(capacities[l])));
        total += final[l];
    }
    std::size_t l = 0;
    while (total < budget) {
        if (final[l] < capacities[l]) {
            ++final[l];
            ++total;
        }
        l = (l + 1) % n;
    }
    BudgetAllocation alloc;
    alloc.budget = budget;
    alloc.per_layer = std::move(final);
    alloc.capacities = capacities;
    if (names != nullptr) {
        alloc.layer_names = *names;
    } else {
        for (std::size_t i = 0; i < n; ++i) alloc.layer_names.push_back("layer" + std::to_string(i));
    }
    return alloc;
}

AllocationReport validate_allocation(const BudgetAllocation& alloc,
                                     const std::vector<ReluShape>& shapes) {
    AllocationReport report;
    auto flag = [&](const std::string& msg) {
        report.ok = false;
        report.violations.push_back(msg);
    };
    if (alloc.per_layer.size() != alloc.capacities.size() ||
        alloc.per_layer.size() != alloc.layer_names.size()) {
        flag("inconsistent layer counts in allocation");
        return report;
    }
    const std::int64_t total = alloc.total();
    if (total != alloc.budget) {
        flag("sum " + std::to_string(total) + " != budget " + std::to_string(alloc.budget));
    }
    for (std::size_t l = 0; l < alloc.per_layer.size(); ++l) {
        if (alloc.per_layer[l] < 0) {
            flag("layer '" + alloc.layer_names[l] + "' has negative count");
        }
        if (alloc.per_layer[l] > alloc.capacities[l]) {
            flag("layer '" + alloc.layer_names[l] + "' count " + std::to_string(alloc.per_layer[l]) +
                 " exceeds capacity " + std::to_string(alloc.capacities[l]));
        }
    }
    if (!shapes.empty()) {
        if (shapes.size() != alloc.per_layer.size()) {
            flag("allocation has " + std::to_string(alloc.per_layer.size()) + " layers, model has " +
                 std::to_string(shapes.size()));
        } else {
            for (std::size_t l = 0; l < shapes.size(); ++l) {
                if (shapes[l].name != alloc.layer_names[l]) {
                    flag("layer " + std::to_string(l) + " name '" + alloc.layer_names[l] +
                         "' does not match model '" + shapes[l].name + "'");
                } else if (shapes[l].capacity() != alloc.capacities[l]) {
                    flag("layer '" + alloc.layer_names[l] + "' capacity " +
                         std::to_string(alloc.capacities[l]) + " does not match model " +
                         std::to_string(shapes[l].capacity()));
                }
            }
        }
    }
    return report;
}

std::string allocation_to_json_text(const BudgetAllocation& alloc) {
    json doc;
    doc["budget"] = alloc.budget;
    doc["layers"] = json::array();
    for (std::size_t l = 0; l < alloc.per_layer.size(); ++l) {
        doc["layers"].push_back({{"name", alloc.layer_names[l]},
                                 {"count", alloc.per_layer[l]},
                                 {"capacity", alloc.capacities[l]}});
    }
    return doc.dump(2) + "\n";
}

BudgetAllocation allocation_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("allocation: JSON parse error: ") + e.what());
    }
    BudgetAllocation alloc;
    try {
        alloc.budget = doc.at("budget").get<std::int64_t>();
        for (const auto& jl : doc.at("layers")) {
            alloc.layer_names.push_back(jl.at("name").get<std::string>());
            alloc.per_layer.push_back(jl.at("count").get<std::int64_t>());
            alloc.capacities.push_back(jl.at("capacity").get<std::int64_t>());
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("allocation: ") + e.what());
    }
    return alloc;
}

void save_allocation(const BudgetAllocation& alloc, const std::string& path) {
    const std::string text = allocation_to_json_text(alloc);
    write_file_atomic(path, text.data(), text.size());
}

BudgetAllocation load_allocation(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open allocation " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return allocation_from_json_text(text);
}

} // namespace senet
