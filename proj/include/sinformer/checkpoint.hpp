#pragma once

// Binary checkpoint, little-endian:
//   "SFCK" | u16 version | config | u32 tensor count |
//   per tensor: u16 name length, name, u8 rank, u32 dims..., f32 data |
//   u32 CRC-32 of every preceding byte.

#include <filesystem>

#include "sinformer/model.hpp"

namespace sinformer::model {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Throws IoError when the file cannot be written.
void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);

/// Throws IoError when unreadable, FormatError on a damaged container
/// (magic, version, length, checksum, tensor names or shapes).
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

/// As above, then throws IncompatibleError naming the first field that
/// differs from `expected`.
ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

/// Throws IncompatibleError naming the first differing field.
void require_compatible(const ModelConfig& have, const ModelConfig& want);

}  // namespace sinformer::model
