// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "senet/tensor.hpp"

namespace senet {

// SENETCKP container: magic "SENETCKP", version u16, tensor count u32, then
// per tensor: name (u16 length + UTF-8 bytes), rank u8, dims u32 each, and a
// raw little-endian float32 payload. Round trips are byte exact.

struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> entries;

    void add(std::string name, Tensor t) { entries.emplace_back(std::move(name), std::move(t)); }
    const Tensor* find(const std::string& name) const;
    bool empty() const { return entries.empty(); }
};

constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::uint8_t* data, std::size_t size);

/// Write-temp-then-rename so readers never observe a partial file.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a 64 over a file's bytes; used by the run manifest.
std::uint64_t hash_file(const std::string& path);
std::uint64_t hash_bytes(const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_atomic(const std::string& path, const void* data, std::size_t size);

} // namespace senet
