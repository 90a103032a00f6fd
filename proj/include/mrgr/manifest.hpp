#pragma once

// Per-stage run manifests. Every pipeline stage writes one JSON manifest
// recording the full config snapshot, the content hashes of every file it
// read and wrote, wall-clock timing, and stage counters. The hashes chain
// stages together: `verify` walks all manifests in a run directory and
// reports any artifact whose bytes no longer match what a stage recorded.
// Timings live only here, never in metric reports, so reports stay
// bitwise-reproducible.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrgr/json.hpp"

namespace mrgr {

struct FileRef {
    std::string path;
    std::string hash; // fnv1a64 hex of the file bytes
};

struct RunManifest {
    std::string stage;
    int64_t version = 1;
    std::string config_hash;  // experiment fingerprint at stage time
    std::string config_text;  // canonical key=value snapshot (all keys)
    int64_t seed = 0;
    std::map<std::string, FileRef> inputs;  // logical name -> file
    std::map<std::string, FileRef> outputs;
    int64_t wall_ms = 0;
    Json counters = Json::object();
};

void save_manifest(const std::string& path, const RunManifest& m);
RunManifest load_manifest(const std::string& path);

// hash + record helper: computes the file hash now.
FileRef file_ref(const std::string& path);

// Walk all manifest_*.json files in a run directory. Returns one line per
// problem (missing file, hash drift), each naming the stage to rerun;
// empty result means every recorded hash still matches the bytes on disk.
std::vector<std::string> verify_run_dir(const std::string& out_dir);

} // namespace mrgr
