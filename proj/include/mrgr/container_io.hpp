#pragma once

#include <map>
#include <string>
#include <vector>

#include "mrgr/json.hpp"

#include "mrgr/backbone.hpp"
#include "mrgr/tensor.hpp"

namespace mrgr {

// Binary container shared by checkpoints and bank stores:
//   [8-byte magic][u32 LE version][u64 LE manifest length][manifest JSON]
//   [payload: concatenated little-endian f64 arrays]
// The manifest is {"meta": ..., "tensors": [{"name","shape","offset"}...]}
// with offsets in bytes relative to the payload start. Writes go through a
// temp file + rename so partially written containers never exist on disk.

inline constexpr uint32_t CONTAINER_VERSION = 1;
inline constexpr char MAGIC_CHECKPOINT[9] = "MRGRCKPT";
inline constexpr char MAGIC_BANKS[9] = "MRGRMEMB";

struct NamedTensor {
    std::string name;
    const Tensor* tensor;
};

void write_container(const std::string& path, const char* magic8, const nlohmann::json& meta,
                     const std::vector<NamedTensor>& tensors);

struct LoadedContainer {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors; // in manifest order
    const Tensor& tensor(const std::string& name) const;
};

LoadedContainer read_container(const std::string& path, const char* magic8);

// ------------------------------------------------------------ checkpoints ----

// Backbone checkpoint (role "backbone"): config + named parameter tensors.
void save_backbone(const BackboneParams& p, const std::string& path);
// Loaded checkpoints come back frozen; training always starts from init().
BackboneParams load_backbone(const std::string& path);

} // namespace mrgr
