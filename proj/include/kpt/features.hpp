#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "kpt/image.hpp"
#include "kpt/nn.hpp"

namespace kpt {

inline constexpr std::size_t kPatchSize = 8;

/// Center of grid cell (row, col) in pixel coordinates: (8c + 4, 8r + 4).
inline Vec2 patch_center(std::size_t row, std::size_t col) {
  return {static_cast<double>(kPatchSize * col) + 4.0, static_cast<double>(kPatchSize * row) + 4.0};
}
/// Row-major patch index -> center.
inline Vec2 patch_center_of(std::size_t index, std::size_t grid_cols) {
  return patch_center(index / grid_cols, index % grid_cols);
}
/// Index of the grid cell containing `p` (floor division by 8, row-major).
std::size_t patch_index_of(Vec2 p, std::size_t grid_cols);

/// Descriptors of all 8x8 patches of an image at 1/8 resolution.
struct DenseFeatureGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dim = 0;
  Tensor features;  // [rows*cols x dim], row-major over the grid

  std::size_t patch_count() const { return rows * cols; }
  Vec2 center(std::size_t row, std::size_t col) const { return patch_center(row, col); }
  std::vector<Vec2> centers() const;
};

struct ExtractorConfig {
  std::vector<std::size_t> widths{16, 32, 64};  // stride-2 blocks
  std::size_t dim = 64;                          // final stride-1 block
};

struct ExtractorParams {
  std::vector<Tensor> weights;  // [out x in x 3 x 3]
  std::vector<Tensor> biases;
  std::vector<std::size_t> strides;
  std::size_t dim = 0;
};

ExtractorParams make_extractor(ParamStore& store, const std::string& prefix, const ExtractorConfig& cfg, Rng& rng);

/// Validates the H, W multiple-of-8 contract.
void check_extractable(const Image& img);
/// Stacks equally sized images into [B x 1 x H x W], centered around zero.
Tensor images_to_tensor(std::span<const Image* const> images);
/// [B x 1 x H x W] -> [B*(H/8)*(W/8) x D], grouped by image.
Tensor extract_dense_rows(const Tensor& images, const ExtractorParams& params);
DenseFeatureGrid extract_dense(const Image& img, const ExtractorParams& params);

/// Bilinear weights of `p` with respect to an axis-aligned cell given as
/// (top-left, top-right, bottom-left, bottom-right). Throws ContractError
/// when p lies outside the cell.
std::array<double, 4> bilinear_weights(Vec2 p, const std::array<Vec2, 4>& cell);

/// Four (row index, weight) taps per keypoint for interpolating a grid in
/// patch-center coordinates. Positions outside the hull of the centers clamp
/// to the nearest cell. `row_offset` shifts the indices (batched grids).
struct SampleTaps {
  std::vector<std::size_t> indices;
  std::vector<Real> weights;
};
SampleTaps bilinear_taps(std::size_t grid_rows, std::size_t grid_cols, std::span<const Vec2> keypoints,
                         std::size_t image_height, std::size_t image_width, std::size_t row_offset = 0);

/// [M x D] descriptors, row i for keypoint i.
Tensor sample_descriptors(const DenseFeatureGrid& grid, std::span<const Vec2> keypoints);

}  // namespace kpt
