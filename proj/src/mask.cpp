// SPDX-License-Identifier: Apache-2.0
#include "senet/mask.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

#include "senet/checkpoint.hpp"

namespace senet {

const char* granularity_name(Granularity g) {
    return g == Granularity::Pixel ? "pixel" : "channel";
}

Granularity granularity_from_name(const std::string& s) {
    if (s == "pixel") return Granularity::Pixel;
    if (s == "channel") return Granularity::Channel;
    throw ValidationError("unknown granularity '" + s + "' (expected pixel|channel)");
}

std::int64_t MaskLayer::ones() const {
    std::int64_t n = 0;
    for (std::uint8_t b : bits) n += b;
    return n;
}

std::int64_t MaskLayer::ones_in_channel_prefix(int channels) const {
    const std::size_t limit = static_cast<std::size_t>(channels) * h * w;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < limit && i < bits.size(); ++i) n += bits[i];
    return n;
}

std::int64_t ReluMask::total_ones() const {
    std::int64_t n = 0;
    for (const auto& l : layers) n += l.ones();
    return n;
}

const MaskLayer* ReluMask::find(const std::string& name) const {
    for (const auto& l : layers) {
        if (l.name == name) return &l;
    }
    return nullptr;
}

MaskLayer* ReluMask::find(const std::string& name) {
    for (auto& l : layers) {
        if (l.name == name) return &l;
    }
    return nullptr;
}

namespace {

constexpr char kMagic[8] = {'S', 'E', 'N', 'E', 'T', 'M', 'S', 'K'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

} // namespace

std::vector<std::uint8_t> serialize_mask(const ReluMask& mask) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u16(out, kMaskVersion);
    put_u32(out, static_cast<std::uint32_t>(mask.layers.size()));
    for (const auto& layer : mask.layers) {
        put_u16(out, static_cast<std::uint16_t>(layer.name.size()));
        out.insert(out.end(), layer.name.begin(), layer.name.end());
        put_u32(out, static_cast<std::uint32_t>(layer.h));
        put_u32(out, static_cast<std::uint32_t>(layer.w));
        put_u32(out, static_cast<std::uint32_t>(layer.c));
        out.push_back(static_cast<std::uint8_t>(mask.granularity));
        // File order: h slowest, then w, c fastest; LSB-first bit packing.
        const std::size_t nbits = static_cast<std::size_t>(layer.h) * layer.w * layer.c;
        std::vector<std::uint8_t> packed((nbits + 7) / 8, 0);
        std::size_t bit = 0;
        for (int y = 0; y < layer.h; ++y) {
            for (int x = 0; x < layer.w; ++x) {
                for (int ch = 0; ch < layer.c; ++ch) {
                    if (layer.bits[layer.index(ch, y, x)]) {
                        packed[bit >> 3] |= static_cast<std::uint8_t>(1u << (bit & 7));
                    }
                    ++bit;
                }
            }
        }
        out.insert(out.end(), packed.begin(), packed.end());
    }
    return out;
}

ReluMask parse_mask(const std::uint8_t* data, std::size_t size) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (size - pos < n) throw ValidationError(std::string("mask file truncated at ") + what);
    };
    need(8, "magic");
    if (std::memcmp(data, kMagic, 8) != 0) throw ValidationError("not a SENETMSK file (bad magic)");
    pos += 8;
    need(2, "version");
    const std::uint16_t version = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    if (version != kMaskVersion) {
        throw ValidationError("unsupported mask version " + std::to_string(version));
    }
    auto read_u32 = [&](const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
        pos += 4;
        return v;
    };
    const std::uint32_t count = read_u32("layer count");
    ReluMask mask;
    mask.layers.reserve(count);
    for (std::uint32_t li = 0; li < count; ++li) {
        need(2, "name length");
        const std::uint16_t name_len = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
        pos += 2;
        need(name_len, "name");
        MaskLayer layer;
        layer.name.assign(reinterpret_cast<const char*>(data + pos), name_len);
        pos += name_len;
        layer.h = static_cast<int>(read_u32("h"));
        layer.w = static_cast<int>(read_u32("w"));
        layer.c = static_cast<int>(read_u32("c"));
        need(1, "granularity");
        const std::uint8_t g = data[pos++];
        if (g > 1) throw ValidationError("mask layer '" + layer.name + "' has bad granularity byte");
        mask.granularity = static_cast<Granularity>(g);
        const std::size_t nbits = static_cast<std::size_t>(layer.h) * layer.w * layer.c;
        const std::size_t nbytes = (nbits + 7) / 8;
        need(nbytes, "bitmap");
        layer.bits.assign(nbits, 0);
        std::size_t bit = 0;
        for (int y = 0; y < layer.h; ++y) {
            for (int x = 0; x < layer.w; ++x) {
                for (int ch = 0; ch < layer.c; ++ch) {
                    const std::uint8_t byte = data[pos + (bit >> 3)];
                    layer.bits[layer.index(ch, y, x)] = (byte >> (bit & 7)) & 1u;
                    ++bit;
                }
            }
        }
        pos += nbytes;
        mask.layers.push_back(std::move(layer));
    }
    if (pos != size) {
        throw ValidationError("mask file has " + std::to_string(size - pos) + " trailing bytes");
    }
    return mask;
}

void save_mask(const ReluMask& mask, const std::string& path) {
    const auto bytes = serialize_mask(mask);
    write_file_atomic(path, bytes.data(), bytes.size());
    const std::string sidecar = mask_sidecar_json(mask);
    write_file_atomic(path + ".json", sidecar.data(), sidecar.size());
}

ReluMask load_mask(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return parse_mask(bytes.data(), bytes.size());
}

std::string mask_sidecar_json(const ReluMask& mask) {
    nlohmann::json doc;
    doc["granularity"] = granularity_name(mask.granularity);
    doc["layers"] = nlohmann::json::array();
    for (const auto& layer : mask.layers) {
        doc["layers"].push_back({{"name", layer.name},
                                 {"ones", layer.ones()},
                                 {"capacity", layer.capacity()}});
    }
    return doc.dump(2) + "\n";
}

} // namespace senet
