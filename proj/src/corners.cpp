#include "kpt/corners.hpp"

#include <algorithm>
#include <cmath>

namespace kpt {

std::vector<double> min_eigen_response(const Image& img, int window_radius) {
  const auto h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  auto px = [&](long r, long c) {
    r = std::clamp(r, 0L, h - 1);
    c = std::clamp(c, 0L, w - 1);
    return static_cast<double>(img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
  };
  std::vector<double> ixx(static_cast<std::size_t>(h * w)), iyy(ixx.size()), ixy(ixx.size());
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      // Sobel
      const double gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
      const double gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
      const auto i = static_cast<std::size_t>(r * w + c);
      ixx[i] = gx * gx / 64.0;
      iyy[i] = gy * gy / 64.0;
      ixy[i] = gx * gy / 64.0;
    }
  std::vector<double> out(ixx.size());
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      double a = 0, b = 0, d = 0;
      for (long dy = -window_radius; dy <= window_radius; ++dy)
        for (long dx = -window_radius; dx <= window_radius; ++dx) {
          const long rr = std::clamp(r + dy, 0L, h - 1), cc = std::clamp(c + dx, 0L, w - 1);
          const auto i = static_cast<std::size_t>(rr * w + cc);
          a += ixx[i];
          b += ixy[i];
          d += iyy[i];
        }
      out[static_cast<std::size_t>(r * w + c)] = 0.5 * (a + d) - std::sqrt(0.25 * (a - d) * (a - d) + b * b);
    }
  return out;
}

std::vector<Corner> detect_corners(const Image& img, const CornerOptions& opts) {
  const auto h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  const auto resp = min_eigen_response(img, opts.window_radius);
  const double peak = resp.empty() ? 0.0 : *std::max_element(resp.begin(), resp.end());
  const double floor_score = std::max(opts.min_response, opts.quality * peak);
  std::vector<Corner> found;
  for (long r = opts.border; r < h - opts.border; ++r)
    for (long c = opts.border; c < w - opts.border; ++c) {
      const double s = resp[static_cast<std::size_t>(r * w + c)];
      if (s < floor_score) continue;
      bool is_max = true;
      for (long dy = -opts.nms_radius; dy <= opts.nms_radius && is_max; ++dy)
        for (long dx = -opts.nms_radius; dx <= opts.nms_radius; ++dx) {
          const long rr = r + dy, cc = c + dx;
          if ((dy == 0 && dx == 0) || rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const double o = resp[static_cast<std::size_t>(rr * w + cc)];
          // Earlier raster position wins ties.
          if (o > s || (o == s && (rr * w + cc) < (r * w + c))) {
            is_max = false;
            break;
          }
        }
      if (is_max) found.push_back({{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5}, s});
    }
  std::stable_sort(found.begin(), found.end(), [](const Corner& a, const Corner& b) { return a.score > b.score; });
  if (found.size() > opts.max_corners) found.resize(opts.max_corners);
  return found;
}

}  // namespace kpt
