#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "kpt/attention.hpp"
#include "kpt/features.hpp"

namespace kpt {

inline constexpr std::size_t kWindow = 9;
inline constexpr double kMaxOffset = 4.0;

/// 3x3 window of grid cells around a patch, row-major. Cells off the grid
/// replicate the nearest valid cell and are marked invalid.
struct NeighborWindow {
  std::array<std::size_t, kWindow> cells{};
  std::array<Vec2, kWindow> offsets{};  // from {-8, 0, 8}^2
  std::array<bool, kWindow> valid{};
};

NeighborWindow gather_neighbors(std::size_t grid_rows, std::size_t grid_cols, std::size_t patch_index);

/// Inputs of the fine module for one keypoint.
struct FineContext {
  Tensor original;   // [1 x D] sampled CNN descriptor
  Tensor attended;   // [1 x D] after the coarse AAM
  Tensor neighbors;  // [9 x D]
  std::array<Vec2, kWindow> offsets{};
  std::array<bool, kWindow> valid{};
};

FineContext make_context(const DenseFeatureGrid& grid, std::size_t patch_index, const Tensor& original,
                         const Tensor& attended);

/// B contexts stacked: original/attended [B x D], neighbors [9B x D].
struct FineBatch {
  Tensor original;
  Tensor attended;
  Tensor neighbors;
  std::vector<Vec2> offsets;  // 9B
  std::vector<bool> valid;    // 9B

  std::size_t size() const { return original.defined() ? original.dim(0) : 0; }
};

FineBatch batch_of(const FineContext& ctx);

struct FineConfig {
  std::size_t depth = 2;
  std::size_t hidden = 32;
};

struct FineParams {
  std::size_t dim = 0;
  Tensor proj;       // [D x D], shared by both query rows
  MlpParams posenc;  // 2 -> hidden -> D over offsets / 8
  AamParams aam;
  MlpParams head;    // D + 2 -> hidden -> 2
};

FineParams make_fine(ParamStore& store, const std::string& prefix, std::size_t dim, const FineConfig& cfg, Rng& rng);

struct FineOutput {
  Tensor offsets;  // [B x 2], each component in (-4, 4)
  Tensor weights;  // [B x 9] neighbor softmax
};

FineOutput refine_batch(const FineBatch& batch, const FineParams& params);

/// d* for a single context.
Vec2 refine(const FineContext& ctx, const FineParams& params);

inline Vec2 compose(Vec2 coarse_center, Vec2 offset) { return coarse_center + offset; }

}  // namespace kpt
