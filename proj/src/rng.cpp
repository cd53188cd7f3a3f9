// SPDX-License-Identifier: Apache-2.0
#include "senet/rng.hpp"

namespace senet {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}
} // namespace

Rng::Rng(std::uint64_t seed) {
    seed_state(seed);
}

void Rng::seed_state(std::uint64_t seed) {
    seed_fingerprint_ = seed;
    std::uint64_t sm = seed;
    for (auto& word : s_) {
        word = splitmix64(sm);
    }
}

Rng Rng::substream(std::string_view name) const {
    Rng child;
    std::uint64_t mixed = seed_fingerprint_ ^ rotl(fnv1a64(name), 17);
    child.seed_state(mixed);
    return child;
}

Rng Rng::substream(std::uint64_t index) const {
    Rng child;
    std::uint64_t sm = index + 0x632be59bd9b4e019ULL;
    child.seed_state(seed_fingerprint_ ^ rotl(splitmix64(sm), 23));
    return child;
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

std::uint64_t Rng::next_below(std::uint64_t bound) {
    // Reject the biased tail of the 2^64 range.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound + 1) % bound;
    std::uint64_t v = next_u64();
    while (v > limit) {
        v = next_u64();
    }
    return v % bound;
}

float Rng::next_float() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
}

float Rng::next_uniform(float lo, float hi) {
    return lo + (hi - lo) * next_float();
}

float Rng::next_gaussian() {
    float acc = 0.0f;
    for (int i = 0; i < 12; ++i) {
        acc += next_float();
    }
    return acc - 6.0f;
}

} // namespace senet
