#pragma once

#include <filesystem>
#include <string>

#include "extembed/encoder.hpp"

namespace extembed {

// Binary little-endian checkpoint: magic, format version, model config, table
// layout and scale, named tensors, frozen flags, trailing FNV-1a checksum.
// Serialising a loaded checkpoint reproduces the input bytes exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes, const std::string& source = "checkpoint");

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace extembed
