#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "mocap/frames.hpp"

namespace mocap::nn {

// File layout: uint64 little-endian header length, UTF-8 JSON header, then
// little-endian float32 values. The header records "float_count".
void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const std::vector<VecX>& blocks);

struct Checkpoint {
  nlohmann::json header;
  std::vector<double> values;
};

// Throws MissingCheckpoint when the file is absent and FormatError when it
// is malformed.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace mocap::nn
