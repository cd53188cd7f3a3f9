// SPDX-License-Identifier: Apache-2.0
#include "senet/manifest.hpp"

#include <cerrno>
#include <cstdio>
#include <ctime>
#include <fcntl.h>
#include <fstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "senet/checkpoint.hpp"

namespace senet {

using nlohmann::json;

void RunManifest::record(const std::string& stage, const std::string& artifact,
                         const std::string& rel_path, std::uint64_t hash) {
    ArtifactRecord rec;
    rec.path = rel_path;
    rec.hash = hash;
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    rec.timestamp = buf;
    stages[stage][artifact] = rec;
}

bool RunManifest::stage_valid(const std::string& stage, const std::string& workdir) const {
    auto it = stages.find(stage);
    if (it == stages.end()) return false;
    for (const auto& [name, rec] : it->second) {
        const std::string full = workdir + "/" + rec.path;
        std::ifstream probe(full, std::ios::binary);
        if (!probe) return false;
        probe.close();
        if (hash_file(full) != rec.hash) return false;
    }
    return true;
}

const ArtifactRecord& RunManifest::artifact(const std::string& stage, const std::string& name) const {
    auto sit = stages.find(stage);
    if (sit == stages.end()) {
        throw ValidationError("manifest: stage '" + stage + "' not recorded");
    }
    auto ait = sit->second.find(name);
    if (ait == sit->second.end()) {
        throw ValidationError("manifest: stage '" + stage + "' has no artifact '" + name + "'");
    }
    return ait->second;
}

std::string manifest_to_json_text(const RunManifest& m) {
    json doc;
    doc["run_id"] = m.run_id;
    doc["seed"] = m.seed;
    doc["config"] = json::parse(m.config_snapshot);
    json js = json::object();
    for (const auto& [stage, artifacts] : m.stages) {
        json ja = json::object();
        for (const auto& [name, rec] : artifacts) {
            char hash_hex[24];
            std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                          static_cast<unsigned long long>(rec.hash));
            ja[name] = {{"path", rec.path}, {"hash", hash_hex}, {"timestamp", rec.timestamp}};
        }
        js[stage] = ja;
    }
    doc["stages"] = js;
    return doc.dump(2) + "\n";
}

RunManifest manifest_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest: JSON parse error: ") + e.what());
    }
    RunManifest m;
    try {
        m.run_id = doc.at("run_id").get<std::string>();
        m.seed = doc.at("seed").get<std::uint64_t>();
        m.config_snapshot = doc.at("config").dump(2) + "\n";
        for (const auto& [stage, ja] : doc.at("stages").items()) {
            for (const auto& [name, jr] : ja.items()) {
                ArtifactRecord rec;
                rec.path = jr.at("path").get<std::string>();
                rec.hash = std::strtoull(jr.at("hash").get<std::string>().c_str(), nullptr, 16);
                rec.timestamp = jr.value("timestamp", std::string());
                m.stages[stage][name] = rec;
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest: ") + e.what());
    }
    return m;
}

void save_manifest(const RunManifest& m, const std::string& path) {
    const std::string text = manifest_to_json_text(m);
    write_file_atomic(path, text.data(), text.size());
}

RunManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open manifest " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return manifest_from_json_text(text);
}

std::string make_run_id(const std::string& config_snapshot, std::uint64_t seed) {
    std::uint64_t h = hash_bytes(reinterpret_cast<const std::uint8_t*>(config_snapshot.data()),
                                 config_snapshot.size());
    h ^= seed * 0x9e3779b97f4a7c15ULL;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

WorkdirLock::WorkdirLock(const std::string& workdir) : path_(workdir + "/.senet.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST) {
            throw ValidationError("workdir " + workdir +
                                  " is locked by another run (remove .senet.lock if stale)");
        }
        throw RuntimeError("cannot create lock file " + path_);
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] ssize_t ignored = ::write(fd, pid.data(), pid.size());
    ::close(fd);
    held_ = true;
}

WorkdirLock::~WorkdirLock() {
    if (held_) {
        ::unlink(path_.c_str());
    }
}

} // namespace senet
