#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "vesselseg/unet.hpp"

namespace vesselseg {

using CheckpointMetadata = std::map<std::string, std::string>;

inline constexpr const char* kCheckpointVersion = "vesselseg-checkpoint/1";

/// Single-file little-endian container:
///
///   "VSEGCKPT"                      8-byte magic
///   u32 n, n bytes                  format version string
///   u32 n, n bytes                  model config as `key=value` lines
///   u32 n, n bytes                  metadata as sorted `key=value` lines
///   u32 count                       number of weight arrays, then per array:
///     u32 n, n bytes                  array name
///     u32 rank, rank x u64            shape
///     prod(shape) x f32               row-major values
///   u32                             CRC-32 of every preceding byte
///
/// Throws IoError if the file cannot be written.
void save_checkpoint(const Model& model, const CheckpointMetadata& metadata, const std::filesystem::path& path);

/// Throws CheckpointIncompatibleError for a different format version and
/// CheckpointIntegrityError for truncated or corrupted files. The returned
/// model's checkpoint_id() is the hex CRC-32.
Model load_checkpoint(const std::filesystem::path& path, CheckpointMetadata* metadata = nullptr);

std::string serialize_config(const UNetConfig& config);
UNetConfig parse_model_config(const std::string& text);

}  // namespace vesselseg
