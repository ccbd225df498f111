#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kpt/nn.hpp"

namespace kpt {

/// One named array as stored on disk (always 32-bit floats).
struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline constexpr char kCheckpointMagic[4] = {'T', 'R', 'K', 'F'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Layout: "TRKF", version byte, then per entry: u32 name length, UTF-8 name,
/// u32 rank, rank x u32 dims, prod(dims) x f32 values. All little-endian.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

std::vector<CheckpointEntry> snapshot(const ParamStore& store);
/// Copies stored values into the registered parameters of the same name.
/// Every parameter must be present with a matching shape.
void restore(ParamStore& store, const std::vector<CheckpointEntry>& entries);

}  // namespace kpt
