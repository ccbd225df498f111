#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kpt/datagen.hpp"

namespace kpt {

/// Per-pair file stem: zero-padded six-digit index.
std::string pair_stem(std::size_t index);

void write_pair(const std::string& dir, std::size_t index, const ScenePair& pair);
/// Reads NNNNNN_a.ppm, NNNNNN_b.ppm and NNNNNN_gt.csv. Provenance and the
/// generating transforms are not stored; gt_patch is recomputed.
ScenePair read_pair(const std::string& dir, std::size_t index);

struct Manifest {
  std::string kind;  // "synth" or "warp"
  std::uint64_t base_seed = 0;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;  // one per pair, index order
  std::vector<std::string> sources;  // warp: source image per pair
};

void write_manifest(const std::string& dir, const Manifest& m);
Manifest read_manifest(const std::string& dir);

/// Number of consecutive pairs on disk starting at index 0.
std::size_t count_pairs(const std::string& dir);
std::vector<ScenePair> load_dataset(const std::string& dir, std::size_t limit = 0);

}  // namespace kpt
