#include "kpt/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kpt/errors.hpp"
#include "kpt/ops.hpp"

namespace kpt {

std::size_t patch_index_of(Vec2 p, std::size_t grid_cols) {
  const auto col = static_cast<std::size_t>(std::floor(p.x / static_cast<double>(kPatchSize)));
  const auto row = static_cast<std::size_t>(std::floor(p.y / static_cast<double>(kPatchSize)));
  return row * grid_cols + col;
}

std::vector<Vec2> DenseFeatureGrid::centers() const {
  std::vector<Vec2> out;
  out.reserve(patch_count());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.push_back(center(r, c));
  return out;
}

ExtractorParams make_extractor(ParamStore& store, const std::string& prefix, const ExtractorConfig& cfg, Rng& rng) {
  ExtractorParams p;
  p.dim = cfg.dim;
  std::size_t in = 1;
  auto add_block = [&](std::size_t out, std::size_t stride) {
    const std::string base = prefix + ".conv" + std::to_string(p.weights.size());
    p.weights.push_back(store.create_uniform(base + ".weight", {out, in, 3, 3}, in * 9, rng));
    p.biases.push_back(store.create_uniform(base + ".bias", {out}, in * 9, rng));
    p.strides.push_back(stride);
    in = out;
  };
  for (auto w : cfg.widths) add_block(w, 2);
  add_block(cfg.dim, 1);
  return p;
}

void check_extractable(const Image& img) {
  if (img.empty() || img.height() % kPatchSize != 0 || img.width() % kPatchSize != 0) {
    throw InputError("image size " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                     " is not a positive multiple of 8");
  }
}

Tensor images_to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw InputError("no images to stack");
  const std::size_t h = images.front()->height(), w = images.front()->width();
  std::vector<Real> data;
  data.reserve(images.size() * h * w);
  for (const Image* img : images) {
    check_extractable(*img);
    if (img->height() != h || img->width() != w) throw InputError("images in one batch must share a size");
    for (float v : img->pixels()) data.push_back(static_cast<Real>(v) - Real(0.5));
  }
  return Tensor::from({images.size(), 1, h, w}, std::move(data));
}

Tensor extract_dense_rows(const Tensor& images, const ExtractorParams& params) {
  Tensor x = images;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    x = conv2d(x, params.weights[i], params.biases[i], params.strides[i], 1);
    if (i + 1 < params.weights.size()) x = relu(x);
  }
  return nchw_to_rows(x);
}

DenseFeatureGrid extract_dense(const Image& img, const ExtractorParams& params) {
  const Image* one[] = {&img};
  DenseFeatureGrid grid;
  grid.rows = img.height() / kPatchSize;
  grid.cols = img.width() / kPatchSize;
  grid.dim = params.dim;
  grid.features = extract_dense_rows(images_to_tensor(one), params);
  if (grid.features.dim(0) != grid.patch_count()) throw DimensionError("extractor output does not match the 1/8 grid");
  return grid;
}

std::array<double, 4> bilinear_weights(Vec2 p, const std::array<Vec2, 4>& cell) {
  const Vec2 tl = cell[0], tr = cell[1], bl = cell[2];
  const double wx = tr.x - tl.x, wy = bl.y - tl.y;
  if (!(wx > 0) || !(wy > 0)) throw ContractError("bilinear_weights: cell must be an axis-aligned rectangle");
  const double u = (p.x - tl.x) / wx, v = (p.y - tl.y) / wy;
  constexpr double tol = 1e-12;
  if (u < -tol || u > 1 + tol || v < -tol || v > 1 + tol) {
    throw ContractError("bilinear_weights: point outside the cell");
  }
  return {(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v};
}

SampleTaps bilinear_taps(std::size_t grid_rows, std::size_t grid_cols, std::span<const Vec2> keypoints,
                         std::size_t image_height, std::size_t image_width, std::size_t row_offset) {
  SampleTaps taps;
  taps.indices.reserve(keypoints.size() * 4);
  taps.weights.reserve(keypoints.size() * 4);
  const double step = static_cast<double>(kPatchSize);
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const Vec2 p = keypoints[i];
    if (!(p.x >= 0 && p.y >= 0 && p.x < static_cast<double>(image_width) && p.y < static_cast<double>(image_height))) {
      throw InputError("keypoint " + std::to_string(i) + " lies outside the image");
    }
    // Continuous grid coordinates: centers sit at integers.
    auto axis = [step](double v, std::size_t n, std::size_t& lo, std::size_t& hi, double& frac) {
      const double g = (v - step / 2) / step;
      if (n == 1) {
        lo = hi = 0;
        frac = 0;
        return;
      }
      const double clamped = std::clamp(g, 0.0, static_cast<double>(n - 1));
      lo = std::min(static_cast<std::size_t>(std::floor(clamped)), n - 2);
      hi = lo + 1;
      frac = clamped - static_cast<double>(lo);
    };
    std::size_t c0, c1, r0, r1;
    double u, v;
    axis(p.x, grid_cols, c0, c1, u);
    axis(p.y, grid_rows, r0, r1, v);
    const std::array<Vec2, 4> cell{Vec2{static_cast<double>(c0), static_cast<double>(r0)},
                                   Vec2{static_cast<double>(c0) + 1, static_cast<double>(r0)},
                                   Vec2{static_cast<double>(c0), static_cast<double>(r0) + 1},
                                   Vec2{static_cast<double>(c0) + 1, static_cast<double>(r0) + 1}};
    const auto w = bilinear_weights({static_cast<double>(c0) + u, static_cast<double>(r0) + v}, cell);
    const std::array<std::size_t, 4> idx{r0 * grid_cols + c0, r0 * grid_cols + c1, r1 * grid_cols + c0,
                                         r1 * grid_cols + c1};
    for (int k = 0; k < 4; ++k) {
      taps.indices.push_back(row_offset + idx[static_cast<std::size_t>(k)]);
      taps.weights.push_back(static_cast<Real>(w[static_cast<std::size_t>(k)]));
    }
  }
  return taps;
}

Tensor sample_descriptors(const DenseFeatureGrid& grid, std::span<const Vec2> keypoints) {
  if (keypoints.empty()) throw InputError("no keypoints to sample");
  const auto taps = bilinear_taps(grid.rows, grid.cols, keypoints, grid.rows * kPatchSize, grid.cols * kPatchSize);
  return weighted_gather(grid.features, taps.indices, taps.weights, 4);
}

}  // namespace kpt
