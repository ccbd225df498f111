#include "kpt/render.hpp"

#include <cmath>
#include <cstdlib>
#include <algorithm>

#include "kpt/errors.hpp"
#include "kpt/eval.hpp"

namespace kpt {

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

constexpr Rgb kGreen{0, 255, 0};
constexpr Rgb kRed{255, 0, 0};
constexpr Rgb kBlue{0, 0, 255};

void plot(RgbImage& img, long x, long y, Rgb c) {
  if (x < 0 || y < 0) return;
  img.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c.r, c.g, c.b);
}

// Bresenham
void line(RgbImage& img, long x0, long y0, long x1, long y1, Rgb c) {
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    plot(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

long px(double v) { return static_cast<long>(std::floor(v)); }

std::uint8_t gray(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

RgbImage render_matches(const ScenePair& pair, const std::vector<std::size_t>& sampled,
                        const std::vector<TrackResult>& results) {
  if (pair.img1.height() != pair.img2.height()) throw InputError("render_matches: images differ in height");
  if (sampled.size() != results.size()) throw DimensionError("render_matches: one result per sampled keypoint");
  const std::size_t h = pair.img1.height(), w1 = pair.img1.width(), w2 = pair.img2.width();
  const std::size_t right = w1 + kGutter;
  RgbImage out(h, right + w2);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w1; ++c) {
      const auto g = gray(pair.img1.at(r, c));
      out.set(r, c, g, g, g);
    }
    for (std::size_t c = 0; c < w2; ++c) {
      const auto g = gray(pair.img2.at(r, c));
      out.set(r, right + c, g, g, g);
    }
  }
  for (std::size_t k = 0; k < results.size(); ++k) {
    const std::size_t i = sampled[k];
    const TrackResult& res = results[k];
    const Vec2 a = pair.keypoints[i];
    if (res.verdict == Verdict::Occluded) {
      for (long d = -2; d <= 2; ++d) {
        plot(out, px(a.x) + d, px(a.y) + d, kBlue);
        plot(out, px(a.x) + d, px(a.y) - d, kBlue);
      }
      continue;
    }
    if (res.verdict != Verdict::Patch || !res.position) continue;
    const Rgb color = is_correct(res, pair.gt[i], pair.occluded[i]) ? kGreen : kRed;
    line(out, px(a.x), px(a.y), static_cast<long>(right) + px(res.position->x), px(res.position->y), color);
  }
  return out;
}

void write_match_rendering(const std::string& path, const ScenePair& pair, const std::vector<std::size_t>& sampled,
                           const std::vector<TrackResult>& results) {
  write_rgb(path, render_matches(pair, sampled, results));
}

}  // namespace kpt
