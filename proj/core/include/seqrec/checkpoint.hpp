#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "seqrec/transformer.hpp"

namespace seqrec {

// Checkpoint layout:
//
//   bytes 0..7    magic "SEQRECKP"
//   bytes 8..15   uint64 little-endian length N of the metadata document
//   next N bytes  UTF-8 JSON: format_version, model config, architecture
//                 notes, tensor manifest [{name, shape, offset}] and any
//                 caller-supplied `extra` object
//   remainder     row-major little-endian float32 tensors; manifest offsets
//                 are byte offsets from the start of this section

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  Parameters params;
  nlohmann::json extra;
};

/// Throws Error(kCheckpoint) on a bad magic, version, manifest/shape mismatch
/// or truncated tensor data.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace seqrec
