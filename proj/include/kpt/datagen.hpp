#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "kpt/geometry.hpp"
#include "kpt/image.hpp"

namespace kpt {

enum class PairSource { Synthetic, Warped };

/// Two images with ground-truth correspondences for keypoints of the first.
struct ScenePair {
  Image img1, img2;
  std::vector<Vec2> keypoints;
  std::vector<Vec2> gt;          // positions in img2; meaningful only when visible
  std::vector<bool> occluded;
  std::vector<int> gt_patch;     // grid cell of gt, -1 when occluded
  PairSource source = PairSource::Synthetic;
  Vec2 bg_shift, cube_shift;     // synthetic motion
  Homography homography;         // warped: img1 -> img2 coordinates

  std::size_t size() const { return keypoints.size(); }
  double occluded_fraction() const;
};

/// Fills gt_patch from gt and the occlusion flags.
void assign_patches(ScenePair& pair);

/// The pair under one of the eight symmetries of the pixel grid, labels
/// included. Bit 2 of `code` transposes (square images only), then bit 0
/// mirrors x and bit 1 mirrors y.
ScenePair dihedral_view(const ScenePair& pair, unsigned code);

struct JitterParams {
  double brightness_min = 0, brightness_max = 0;
  double contrast_min = 1, contrast_max = 1;
  double noise_sigma = 0;

  bool is_identity() const {
    return brightness_min == 0 && brightness_max == 0 && contrast_min == 1 && contrast_max == 1 && noise_sigma == 0;
  }
};

/// clamp(contrast * (img - 0.5) + 0.5 + brightness + noise, 0, 1)
Image apply_jitter(const Image& img, const JitterParams& jp, std::uint64_t seed);

// ---- synthetic scenes -------------------------------------------------------

struct Primitive {
  std::vector<Vec2> polygon;
  std::vector<Vec2> corners;  // keypoint candidates (a subset of polygon vertices)
  float shade = 0;
};

/// Background primitives drawn in order over a flat base, plus a cube seen
/// as a hexagon of three shaded rhombi. Geometry is in img1 coordinates.
struct Scene {
  std::size_t height = 0, width = 0;
  float base = 0.5f;
  std::vector<Primitive> background;
  std::array<Primitive, 3> cube_faces;
  std::vector<Vec2> cube_outline;   // hexagon
  std::vector<Vec2> cube_corners;   // 6 rim vertices and the center junction
};

enum Layers : unsigned { kLayerBackground = 1, kLayerCube = 2, kLayerAll = 3 };

/// Point-sampled rendering at pixel centers; background content at p comes
/// from p - bg_shift, cube content from p - cube_shift.
Image render_scene(const Scene& scene, Vec2 bg_shift, Vec2 cube_shift, unsigned layers = kLayerAll);

struct SynthConfig {
  std::size_t height = 64, width = 64;
  double bg_max = 16;    // background translation radius (px)
  double cube_max = 50;  // cube translation radius (px)
  std::size_t primitives = 10;
  double cube_radius_min = 0.12, cube_radius_max = 0.22;  // fraction of min(H, W)
  std::size_t max_keypoints = 512;
  double min_corner_gap = 3;  // px between keypoints in img1
  JitterParams jitter;
  std::optional<Vec2> bg_shift, cube_shift;  // fixed motions override sampling
};

Scene make_scene(const SynthConfig& cfg, std::uint64_t seed);
ScenePair gen_synthetic_pair(const SynthConfig& cfg, std::uint64_t seed);

// ---- warped real images -----------------------------------------------------

struct WarpConfig {
  std::size_t crop = 256;
  double difficulty = 0.05;  // max corner shift as a fraction of the crop
  std::size_t m = 512;
  std::size_t m_min = 8;
  std::size_t crop_candidates = 8;
  JitterParams jitter;
  std::optional<Homography> homography;  // crop1 -> crop2 map; overrides sampling
};

inline constexpr double kEasyDifficulty = 0.05;
inline constexpr double kHardDifficulty = 0.15;

/// Corner-perturbation homography on a crop x crop square.
Homography sample_homography(std::size_t crop, double difficulty, std::uint64_t seed);

ScenePair gen_warped_pair(const Image& img, const WarpConfig& cfg, std::uint64_t seed);

/// Per-item seed derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace kpt
