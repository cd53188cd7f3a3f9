// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "senet/arch.hpp"
#include "senet/sensitivity.hpp"

namespace senet {

struct BudgetAllocation {
    std::int64_t budget = 0;
    std::vector<std::string> layer_names;       // ReLU layers, forward order
    std::vector<std::int64_t> per_layer;        // r^l_final
    std::vector<std::int64_t> capacities;       // h*w*c per layer
    // Bookkeeping from the assignment/removal loops (not serialized):
    std::vector<int> active;                    // a^l after the run; 0 = saturated
    std::int64_t r_total = 0;                   // assignment-loop total before removal
    std::int64_t r_remove = 0;                  // overshoot stripped by the removal pass
    std::int64_t r_remain = 0;                  // unassigned budget entering the last pass

    std::int64_t total() const;
};

/// Proportional budget assignment with capacity caps. Per pass, each active
/// layer is granted floor(remaining * eta_hat) (at least 1 while budget
/// remains), capped at its free capacity; a saturated layer is deactivated
/// and eta_hat renormalized over survivors at the pass boundary. Overshoot is
/// then removed one ReLU at a time from the least-sensitive layers first
/// (ties: higher layer index first) until the total equals the budget.
BudgetAllocation allocate(std::int64_t budget, const std::vector<double>& eta_hat,
                          const std::vector<std::int64_t>& capacities,
                          const std::vector<std::string>* names = nullptr);

/// Convenience wrapper pulling eta_hat and capacities from a profile + spec.
BudgetAllocation allocate_for_model(std::int64_t budget, const SensitivityProfile& profile,
                                    const ModelSpec& spec);

/// Uniform baseline: every layer gets the same fraction budget/sum(capacity)
/// of its own capacity (floor), remainder distributed in layer order. Used by
/// the sensitivity-ablation comparisons.
BudgetAllocation allocate_uniform(std::int64_t budget, const std::vector<std::int64_t>& capacities,
                                  const std::vector<std::string>* names = nullptr);

struct AllocationReport {
    bool ok = true;
    std::vector<std::string> violations;
};

AllocationReport validate_allocation(const BudgetAllocation& alloc,
                                     const std::vector<ReluShape>& shapes);

std::string allocation_to_json_text(const BudgetAllocation& alloc);
BudgetAllocation allocation_from_json_text(const std::string& text);
void save_allocation(const BudgetAllocation& alloc, const std::string& path);
BudgetAllocation load_allocation(const std::string& path);

} // namespace senet
