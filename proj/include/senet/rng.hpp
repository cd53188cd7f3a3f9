// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace senet {

// Deterministic xoshiro256** generator. Every stochastic stage draws from its
// own named substream so that changing one stage's consumption pattern does
// not shift any other stage. Only fixed-width integer arithmetic is used, so
// sequences are identical across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    /// Derive an independent generator for a named stage ("init", "mask-init", ...).
    Rng substream(std::string_view name) const;
    /// Derive an independent generator keyed by an index (epoch, layer, ...).
    Rng substream(std::uint64_t index) const;

    std::uint64_t next_u64();
    /// Uniform integer in [0, bound), bound > 0. Rejection sampling, unbiased.
    std::uint64_t next_below(std::uint64_t bound);
    /// Uniform float in [0, 1) with 24 bits of randomness.
    float next_float();
    /// Uniform float in [lo, hi).
    float next_uniform(float lo, float hi);
    /// Approximately standard normal (sum of 12 uniforms, shifted). Avoids
    /// libm so the bit pattern is platform independent.
    float next_gaussian();

private:
    std::uint64_t s_[4];
    std::uint64_t seed_fingerprint_;

    Rng() = default;
    void seed_state(std::uint64_t seed);
};

/// SplitMix64 step; also used for hashing substream names.
std::uint64_t splitmix64(std::uint64_t& state);

} // namespace senet
