// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "senet/common.hpp"

namespace senet {

enum class Granularity : std::uint8_t {
    Pixel = 0,
    Channel = 1,
};

const char* granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& s);

/// Per-layer binary ReLU mask. Bytes are stored channel-major ([c][h][w]) to
/// line up with NCHW activations, so an ordered-dropout sub-model reads a
/// contiguous prefix. The on-disk layout differs; see mask.cpp.
struct MaskLayer {
    std::string name;
    int h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> bits;   // size h*w*c, values 0/1

    std::int64_t capacity() const { return static_cast<std::int64_t>(h) * w * c; }
    std::int64_t ones() const;
    /// Ones within channels [0, channels); used for sub-model ReLU counts.
    std::int64_t ones_in_channel_prefix(int channels) const;
    std::size_t index(int ch, int y, int x) const {
        return (static_cast<std::size_t>(ch) * h + y) * w + x;
    }
};

struct ReluMask {
    std::vector<MaskLayer> layers;
    Granularity granularity = Granularity::Pixel;

    std::int64_t total_ones() const;
    const MaskLayer* find(const std::string& name) const;
    MaskLayer* find(const std::string& name);
};

// SENETMSK container: magic "SENETMSK", version u16, layer count u32, then
// per layer: name (u16 + UTF-8), dims h,w,c (u32 x 3), granularity u8, and a
// bit-packed mask in h,w,c order with c fastest, LSB-first within each byte.
constexpr std::uint16_t kMaskVersion = 1;

std::vector<std::uint8_t> serialize_mask(const ReluMask& mask);
ReluMask parse_mask(const std::uint8_t* data, std::size_t size);
void save_mask(const ReluMask& mask, const std::string& path);
ReluMask load_mask(const std::string& path);

/// Human-readable sidecar: {"granularity":..., "layers":[{"name","ones","capacity"}]}
std::string mask_sidecar_json(const ReluMask& mask);

} // namespace senet
