// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "senet/common.hpp"

namespace senet {

struct ArtifactRecord {
    std::string path;          // relative to the workdir
    std::uint64_t hash = 0;    // FNV-1a 64 of the file bytes
    std::string timestamp;     // informational only; excluded from idempotence
};

/// Stage ledger for one pipeline run. A stage is trusted on resume only when
/// every recorded artifact still exists with a matching content hash.
struct RunManifest {
    std::string run_id;                 // hash of the config snapshot + seed
    std::string config_snapshot;        // canonical config JSON
    std::uint64_t seed = 0;
    std::map<std::string, std::map<std::string, ArtifactRecord>> stages;

    bool stage_done(const std::string& stage) const { return stages.count(stage) > 0; }
    void record(const std::string& stage, const std::string& artifact, const std::string& rel_path,
                std::uint64_t hash);
    /// True when the stage exists and all artifacts verify against workdir.
    bool stage_valid(const std::string& stage, const std::string& workdir) const;
    const ArtifactRecord& artifact(const std::string& stage, const std::string& name) const;
};

std::string manifest_to_json_text(const RunManifest& m);
RunManifest manifest_from_json_text(const std::string& text);
void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

std::string make_run_id(const std::string& config_snapshot, std::uint64_t seed);

/// Exclusive per-workdir lock (O_EXCL create of .senet.lock); released on
/// destruction. Throws ValidationError when another run holds it.
class WorkdirLock {
public:
    explicit WorkdirLock(const std::string& workdir);
    ~WorkdirLock();
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

private:
    std::string path_;
    bool held_ = false;
};

} // namespace senet
