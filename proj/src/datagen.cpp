#include "kpt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "kpt/corners.hpp"
#include "kpt/errors.hpp"
#include "kpt/features.hpp"

namespace kpt {

namespace {

using Rng64 = std::mt19937_64;

double uniform(Rng64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

bool in_frame(Vec2 p, std::size_t h, std::size_t w) {
  return p.x >= 0 && p.y >= 0 && p.x < static_cast<double>(w) && p.y < static_cast<double>(h);
}

// Integer translation drawn uniformly from the lattice points of a disc.
Vec2 integer_shift(Rng64& rng, double radius) {
  const auto r = static_cast<long>(std::floor(radius));
  if (r <= 0) return {};
  std::uniform_int_distribution<long> d(-r, r);
  while (true) {
    const long dx = d(rng), dy = d(rng);
    if (static_cast<double>(dx * dx + dy * dy) <= radius * radius) {
      return {static_cast<double>(dx), static_cast<double>(dy)};
    }
  }
}

Vec2 rotate(Vec2 v, double a) { return {v.x * std::cos(a) - v.y * std::sin(a), v.x * std::sin(a) + v.y * std::cos(a)}; }

float pick_shade(Rng64& rng, float avoid) {
  while (true) {
    const auto s = static_cast<float>(uniform(rng, 0.05, 0.95));
    if (std::abs(s - avoid) > 0.2f) return s;
  }
}

Primitive random_primitive(Rng64& rng, Vec2 center, double size) {
  Primitive p;
  const double angle = uniform(rng, 0, 2 * std::numbers::pi);
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0: {  // triangle
      for (int k = 0; k < 3; ++k) {
        const double a = angle + k * 2 * std::numbers::pi / 3 + uniform(rng, -0.5, 0.5);
        p.polygon.push_back(center + uniform(rng, 0.5, 1.0) * size * Vec2{std::cos(a), std::sin(a)});
      }
      break;
    }
    case 1: {  // quad
      const double hw = size * uniform(rng, 0.4, 1.0), hh = size * uniform(rng, 0.4, 1.0);
      for (Vec2 v : {Vec2{-hw, -hh}, Vec2{hw, -hh}, Vec2{hw, hh}, Vec2{-hw, hh}}) p.polygon.push_back(center + rotate(v, angle));
      break;
    }
    case 2: {  // five-point star
      for (int k = 0; k < 10; ++k) {
        const double a = angle + k * std::numbers::pi / 5;
        const double r = (k % 2 == 0) ? size : 0.45 * size;
        p.polygon.push_back(center + r * Vec2{std::cos(a), std::sin(a)});
      }
      break;
    }
    default: {  // stripe
      const double hl = size * uniform(rng, 1.2, 2.0), hw = uniform(rng, 1.5, 3.0);
      for (Vec2 v : {Vec2{-hl, -hw}, Vec2{hl, -hw}, Vec2{hl, hw}, Vec2{-hl, hw}}) p.polygon.push_back(center + rotate(v, angle));
      break;
    }
  }
  p.corners = p.polygon;
  return p;
}

struct Box {
  double x0, y0, x1, y1;
};

Box bounds(const std::vector<Vec2>& poly) {
  Box b{poly[0].x, poly[0].y, poly[0].x, poly[0].y};
  for (const auto& v : poly) {
    b.x0 = std::min(b.x0, v.x);
    b.y0 = std::min(b.y0, v.y);
    b.x1 = std::max(b.x1, v.x);
    b.y1 = std::max(b.y1, v.y);
  }
  return b;
}

bool hit(const std::vector<Vec2>& poly, const Box& b, Vec2 p) {
  return p.x >= b.x0 && p.x <= b.x1 && p.y >= b.y0 && p.y <= b.y1 && point_in_polygon(poly, p);
}

}  // namespace

double ScenePair::occluded_fraction() const {
  if (occluded.empty()) return 0;
  return static_cast<double>(std::count(occluded.begin(), occluded.end(), true)) /
         static_cast<double>(occluded.size());
}

void assign_patches(ScenePair& pair) {
  const std::size_t cols = pair.img2.width() / kPatchSize;
  pair.gt_patch.assign(pair.size(), -1);
  for (std::size_t i = 0; i < pair.size(); ++i) {
    if (pair.occluded[i]) continue;
    if (!in_frame(pair.gt[i], pair.img2.height(), pair.img2.width())) {
      throw ContractError("visible keypoint " + std::to_string(i) + " has ground truth outside img2");
    }
    pair.gt_patch[i] = static_cast<int>(patch_index_of(pair.gt[i], cols));
  }
}

ScenePair dihedral_view(const ScenePair& pair, unsigned code) {
  if (code > 7) throw InputError("dihedral_view: code must be in [0, 8)");
  const bool transpose = code & 4u, mirror_x = code & 1u, mirror_y = code & 2u;
  const std::size_t h = pair.img1.height(), w = pair.img1.width();
  if (transpose && h != w) throw InputError("dihedral_view: transposition needs square images");
  if (code == 0) return pair;

  auto image = [&](const Image& src) {
    Image out(h, w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        std::size_t sr = r, sc = c;
        if (mirror_x) sc = w - 1 - sc;
        if (mirror_y) sr = h - 1 - sr;
        if (transpose) std::swap(sr, sc);
        out.at(r, c) = src.at(sr, sc);
      }
    return out;
  };
  // Continuous coordinates with pixel c covering [c, c + 1); x = 0 would mirror onto the open edge.
  const double wd = static_cast<double>(w), hd = static_cast<double>(h);
  auto point = [&](Vec2 p) {
    if (transpose) std::swap(p.x, p.y);
    if (mirror_x) p.x = std::min(wd - p.x, std::nextafter(wd, 0.0));
    if (mirror_y) p.y = std::min(hd - p.y, std::nextafter(hd, 0.0));
    return p;
  };
  auto vector = [&](Vec2 v) {
    if (transpose) std::swap(v.x, v.y);
    if (mirror_x) v.x = -v.x;
    if (mirror_y) v.y = -v.y;
    return v;
  };

  ScenePair out;
  out.img1 = image(pair.img1);
  out.img2 = image(pair.img2);
  out.occluded = pair.occluded;
  out.source = pair.source;
  for (std::size_t i = 0; i < pair.size(); ++i) {
    out.keypoints.push_back(point(pair.keypoints[i]));
    out.gt.push_back(pair.occluded[i] ? pair.gt[i] : point(pair.gt[i]));
  }
  out.bg_shift = vector(pair.bg_shift);
  out.cube_shift = vector(pair.cube_shift);
  std::array<double, 9> t{1, 0, 0, 0, 1, 0, 0, 0, 1};
  if (transpose) t = {0, 1, 0, 1, 0, 0, 0, 0, 1};
  if (mirror_x) {
    for (std::size_t c = 0; c < 3; ++c) t[c] = -t[c] + wd * t[6 + c];
  }
  if (mirror_y) {
    for (std::size_t c = 0; c < 3; ++c) t[3 + c] = -t[3 + c] + hd * t[6 + c];
  }
  const Homography tm = Homography::from(t);
  out.homography = tm.compose(pair.homography).compose(tm.inverse());
  assign_patches(out);
  return out;
}

Image apply_jitter(const Image& img, const JitterParams& jp, std::uint64_t seed) {
  if (jp.brightness_min > jp.brightness_max || jp.contrast_min > jp.contrast_max || jp.noise_sigma < 0 ||
      jp.contrast_min < 0) {
    throw InputError("apply_jitter: invalid jitter ranges");
  }
  if (jp.is_identity()) return img;
  Rng64 rng(seed);
  const double brightness =
      jp.brightness_min == jp.brightness_max ? jp.brightness_min : uniform(rng, jp.brightness_min, jp.brightness_max);
  const double contrast =
      jp.contrast_min == jp.contrast_max ? jp.contrast_min : uniform(rng, jp.contrast_min, jp.contrast_max);
  std::normal_distribution<double> noise(0.0, jp.noise_sigma > 0 ? jp.noise_sigma : 1.0);
  Image out = img;
  for (auto& v : out.pixels()) {
    double x = contrast * (static_cast<double>(v) - 0.5) + 0.5 + brightness;
    if (jp.noise_sigma > 0) x += noise(rng);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

Image render_scene(const Scene& scene, Vec2 bg_shift, Vec2 cube_shift, unsigned layers) {
  std::vector<Box> bg_boxes, cube_boxes;
  for (const auto& p : scene.background) bg_boxes.push_back(bounds(p.polygon));
  for (const auto& f : scene.cube_faces) cube_boxes.push_back(bounds(f.polygon));
  Image img(scene.height, scene.width, (layers & kLayerBackground) ? scene.base : 0.0f);
  for (std::size_t r = 0; r < scene.height; ++r) {
    for (std::size_t c = 0; c < scene.width; ++c) {
      const Vec2 p{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
      float v = img.at(r, c);
      if (layers & kLayerBackground) {
        const Vec2 q = p - bg_shift;
        for (std::size_t k = 0; k < scene.background.size(); ++k)
          if (hit(scene.background[k].polygon, bg_boxes[k], q)) v = scene.background[k].shade;
      }
      if (layers & kLayerCube) {
        const Vec2 q = p - cube_shift;
        for (std::size_t k = 0; k < 3; ++k)
          if (hit(scene.cube_faces[k].polygon, cube_boxes[k], q)) v = scene.cube_faces[k].shade;
      }
      img.at(r, c) = v;
    }
  }
  return img;
}

Scene make_scene(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.height == 0 || cfg.width == 0 || cfg.height % kPatchSize || cfg.width % kPatchSize) {
    throw InputError("synthetic scene size " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                     " must be positive multiples of 8");
  }
  Rng64 rng(seed);
  Scene s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.base = static_cast<float>(uniform(rng, 0.3, 0.7));
  const double side = static_cast<double>(std::min(cfg.height, cfg.width));
  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);
  // Background extends past the frame by the largest shift so moved content is real content.
  const double pad = cfg.bg_max + 0.2 * side;
  const double area_scale = (w + 2 * pad) * (h + 2 * pad) / (w * h);
  const auto count = static_cast<std::size_t>(std::lround(static_cast<double>(cfg.primitives) * area_scale));
  for (std::size_t i = 0; i < count; ++i) {
    const Vec2 center{uniform(rng, -pad, w + pad), uniform(rng, -pad, h + pad)};
    Primitive p = random_primitive(rng, center, side * uniform(rng, 0.08, 0.2));
    p.shade = pick_shade(rng, s.base);
    s.background.push_back(std::move(p));
  }

  const Vec2 c{uniform(rng, 0.35 * w, 0.65 * w), uniform(rng, 0.35 * h, 0.65 * h)};
  const double radius = side * uniform(rng, cfg.cube_radius_min, cfg.cube_radius_max);
  const double theta = uniform(rng, 0, std::numbers::pi / 3);
  std::array<Vec2, 6> v;
  for (int k = 0; k < 6; ++k) {
    const double a = theta + k * std::numbers::pi / 3;
    v[static_cast<std::size_t>(k)] = c + radius * Vec2{std::cos(a), std::sin(a)};
  }
  s.cube_outline.assign(v.begin(), v.end());
  std::array<float, 3> shades{0.92f, 0.55f, 0.12f};
  std::shuffle(shades.begin(), shades.end(), rng);
  for (std::size_t f = 0; f < 3; ++f) {
    s.cube_faces[f].polygon = {c, v[2 * f], v[2 * f + 1], v[(2 * f + 2) % 6]};
    s.cube_faces[f].shade = shades[f];
  }
  s.cube_corners.assign(v.begin(), v.end());
  s.cube_corners.push_back(c);
  return s;
}

ScenePair gen_synthetic_pair(const SynthConfig& cfg, std::uint64_t seed) {
  const Scene scene = make_scene(cfg, seed);
  Rng64 rng(derive_seed(seed, 1));
  const Vec2 bg = cfg.bg_shift ? *cfg.bg_shift : integer_shift(rng, cfg.bg_max);
  const Vec2 cube = cfg.cube_shift ? *cfg.cube_shift : integer_shift(rng, cfg.cube_max);

  ScenePair pair;
  pair.source = PairSource::Synthetic;
  pair.bg_shift = bg;
  pair.cube_shift = cube;
  pair.homography = Homography::translation(bg.x, bg.y);
  pair.img1 = render_scene(scene, {}, {});
  pair.img2 = render_scene(scene, bg, cube);

  const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
  auto usable = [&](Vec2 p) { return p.x >= 1 && p.y >= 1 && p.x < w - 1 && p.y < h - 1; };
  auto far_enough = [&](Vec2 p) {
    for (const auto& q : pair.keypoints)
      if ((p - q).norm() < cfg.min_corner_gap) return false;
    return true;
  };
  std::vector<Vec2> moved_cube;
  for (const auto& v : scene.cube_outline) moved_cube.push_back(v + cube);

  for (std::size_t k = 0; k < scene.background.size() && pair.size() < cfg.max_keypoints; ++k) {
    for (const Vec2 v : scene.background[k].corners) {
      if (pair.size() >= cfg.max_keypoints) break;
      if (!usable(v) || point_in_polygon(scene.cube_outline, v) || !far_enough(v)) continue;
      bool covered = false;
      for (std::size_t j = k + 1; j < scene.background.size() && !covered; ++j)
        covered = point_in_polygon(scene.background[j].polygon, v);
      if (covered) continue;
      const Vec2 g = v + bg;
      pair.keypoints.push_back(v);
      pair.gt.push_back(g);
      pair.occluded.push_back(!in_frame(g, cfg.height, cfg.width) || point_in_polygon(moved_cube, g));
    }
  }
  for (const Vec2 v : scene.cube_corners) {
    if (pair.size() >= cfg.max_keypoints) break;
    if (!usable(v) || !far_enough(v)) continue;
    const Vec2 g = v + cube;
    pair.keypoints.push_back(v);
    pair.gt.push_back(g);
    pair.occluded.push_back(!in_frame(g, cfg.height, cfg.width));
  }
  assign_patches(pair);
  pair.img1 = apply_jitter(pair.img1, cfg.jitter, derive_seed(seed, 2));
  pair.img2 = apply_jitter(pair.img2, cfg.jitter, derive_seed(seed, 3));
  return pair;
}

Homography sample_homography(std::size_t crop, double difficulty, std::uint64_t seed) {
  Rng64 rng(seed);
  const double s = static_cast<double>(crop);
  const std::array<Vec2, 4> src{Vec2{0, 0}, Vec2{s, 0}, Vec2{s, s}, Vec2{0, s}};
  const double radius = difficulty * s;
  std::array<Vec2, 4> dst = src;
  for (auto& p : dst) {
    const double r = radius * std::sqrt(uniform(rng, 0, 1)), a = uniform(rng, 0, 2 * std::numbers::pi);
    p = p + Vec2{r * std::cos(a), r * std::sin(a)};
  }
  return homography_from_points(src, dst);
}

ScenePair gen_warped_pair(const Image& img, const WarpConfig& cfg, std::uint64_t seed) {
  if (cfg.crop == 0 || cfg.crop % kPatchSize) throw InputError("warp crop must be a positive multiple of 8");
  if (img.height() < cfg.crop || img.width() < cfg.crop) {
    throw InputError("source image " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                     " is smaller than the crop " + std::to_string(cfg.crop));
  }
  Rng64 rng(seed);
  // Choose the candidate crop window holding the most corners.
  CornerOptions scan;
  scan.max_corners = 4096;
  const auto all = detect_corners(img, scan);
  std::uniform_int_distribution<std::size_t> oy(0, img.height() - cfg.crop), ox(0, img.width() - cfg.crop);
  std::size_t best_r = 0, best_c = 0, best_n = 0;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, cfg.crop_candidates); ++t) {
    const std::size_t r = oy(rng), c = ox(rng);
    std::size_t n = 0;
    for (const auto& k : all) {
      n += k.position.x >= static_cast<double>(c) && k.position.x < static_cast<double>(c + cfg.crop) &&
           k.position.y >= static_cast<double>(r) && k.position.y < static_cast<double>(r + cfg.crop);
    }
    if (t == 0 || n > best_n) {
      best_r = r;
      best_c = c;
      best_n = n;
    }
  }

  const Homography hm = cfg.homography ? *cfg.homography : sample_homography(cfg.crop, cfg.difficulty, rng());
  const Homography inv = hm.inverse();
  const Vec2 origin{static_cast<double>(best_c), static_cast<double>(best_r)};

  ScenePair pair;
  pair.source = PairSource::Warped;
  pair.homography = hm;
  pair.img1 = img.crop(best_r, best_c, cfg.crop, cfg.crop);
  pair.img2 = Image(cfg.crop, cfg.crop);
  for (std::size_t r = 0; r < cfg.crop; ++r) {
    for (std::size_t c = 0; c < cfg.crop; ++c) {
      const Vec2 q{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
      try {
        pair.img2.at(r, c) = img.sample(origin + warp_point(inv, q), 0.0f);
      } catch (const InputError&) {
        pair.img2.at(r, c) = 0.0f;
      }
    }
  }

  CornerOptions opts;
  opts.max_corners = cfg.m;
  const auto corners = detect_corners(pair.img1, opts);
  if (corners.size() < cfg.m_min) {
    throw InputError("only " + std::to_string(corners.size()) + " corners found, need " + std::to_string(cfg.m_min));
  }
  for (const auto& k : corners) {
    pair.keypoints.push_back(k.position);
    Vec2 g{-1, -1};
    bool occ = true;
    try {
      g = warp_point(hm, k.position);
      occ = !in_frame(g, cfg.crop, cfg.crop);
    } catch (const InputError&) {
    }
    pair.gt.push_back(g);
    pair.occluded.push_back(occ);
  }
  assign_patches(pair);
  pair.img1 = apply_jitter(pair.img1, cfg.jitter, derive_seed(seed, 2));
  pair.img2 = apply_jitter(pair.img2, cfg.jitter, derive_seed(seed, 3));
  return pair;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace kpt
