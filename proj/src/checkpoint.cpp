// SPDX-License-Identifier: Apache-2.0
#include "senet/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace senet {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'N', 'E', 'T', 'C', 'K', 'P'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::uint8_t* p;
    std::size_t remaining;

    void need(std::size_t n, const char* what) const {
        if (remaining < n) {
            throw ValidationError(std::string("checkpoint truncated while reading ") + what);
        }
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        remaining -= 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        remaining -= 4;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        std::uint8_t v = *p++;
        --remaining;
        return v;
    }
};

} // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : entries) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u16(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& [name, tensor] : ckpt.entries) {
        if (name.size() > 0xffff) throw ValidationError("checkpoint tensor name too long: " + name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(tensor.rank()));
        for (int i = 0; i < tensor.rank(); ++i) {
            put_u32(out, static_cast<std::uint32_t>(tensor.dim(i)));
        }
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            put_f32(out, tensor[i]);
        }
    }
    return out;
}

Checkpoint parse_checkpoint(const std::uint8_t* data, std::size_t size) {
    Reader r{data, size};
    r.need(8, "magic");
    if (std::memcmp(r.p, kMagic, 8) != 0) {
        throw ValidationError("not a SENETCKP file (bad magic)");
    }
    r.p += 8;
    r.remaining -= 8;
    const std::uint16_t version = r.u16("version");
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32("tensor count");
    Checkpoint ckpt;
    ckpt.entries.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint16_t name_len = r.u16("name length");
        r.need(name_len, "name");
        std::string name(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        r.remaining -= name_len;
        const std::uint8_t rank = r.u8("rank");
        if (rank < 1 || rank > 4) {
            throw ValidationError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
        }
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (int i = 0; i < rank; ++i) {
            shape[static_cast<std::size_t>(i)] = static_cast<int>(r.u32("dim"));
            numel *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
        }
        r.need(numel * 4, "payload");
        std::vector<float> values(numel);
        for (std::size_t i = 0; i < numel; ++i) {
            std::uint32_t bits = r.u32("payload");
            float f;
            std::memcpy(&f, &bits, 4);
            values[i] = f;
        }
        ckpt.add(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (r.remaining != 0) {
        throw ValidationError("checkpoint has " + std::to_string(r.remaining) + " trailing bytes");
    }
    return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeError("cannot open " + path);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0 && !f.read(reinterpret_cast<char*>(bytes.data()), size)) {
        throw RuntimeError("short read on " + path);
    }
    return bytes;
}

void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw RuntimeError("cannot open " + tmp + " for writing");
        if (size > 0) f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!f) throw RuntimeError("short write on " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw RuntimeError("rename " + tmp + " -> " + path + " failed");
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    write_file_atomic(path, bytes.data(), bytes.size());
}

Checkpoint load_checkpoint(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return parse_checkpoint(bytes.data(), bytes.size());
}

std::uint64_t hash_bytes(const std::uint8_t* data, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return hash_bytes(bytes.data(), bytes.size());
}

} // namespace senet
