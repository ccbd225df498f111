#pragma once

#include <cstddef>
#include <vector>

#include "kpt/image.hpp"

namespace kpt {

struct CornerOptions {
  std::size_t max_corners = 512;
  int nms_radius = 4;        // suppression window is (2r+1)^2 pixels
  int border = 4;            // no corners closer than this to the frame
  int window_radius = 2;     // structure tensor summed over (2r+1)^2 pixels
  double quality = 0.01;     // relative to the strongest response
  double min_response = 1e-5;
};

struct Corner {
  Vec2 position;  // pixel center
  double score;
};

/// Minimum eigenvalue of the gradient structure tensor at every pixel.
std::vector<double> min_eigen_response(const Image& img, int window_radius);

/// Shi-Tomasi corners after non-max suppression, strongest first. Ties break
/// by raster order so the result is deterministic.
std::vector<Corner> detect_corners(const Image& img, const CornerOptions& opts = {});

}  // namespace kpt
