#pragma once

#include <array>
#include <cmath>

namespace kpt {

/// Continuous pixel coordinates: pixel (row r, col c) covers [c, c+1) x [r, r+1).
struct Vec2 {
  double x = 0;
  double y = 0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
  double norm() const { return std::hypot(x, y); }
};

/// 3x3 projective map, row-major, normalized so that h[2][2] == 1.
struct Homography {
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }
  /// Normalizes by h22 and checks invertibility (|det| > 1e-8).
  static Homography from(const std::array<double, 9>& m);

  double operator()(int r, int c) const { return h[static_cast<std::size_t>(r * 3 + c)]; }
  double determinant() const;
  Homography inverse() const;
  /// this * other, i.e. apply `other` first.
  Homography compose(const Homography& other) const;
};

/// Projects p through h. Throws InputError when the homogeneous scale is
/// within 1e-8 of zero (point at infinity).
Vec2 warp_point(const Homography& h, Vec2 p);

/// Exact homography taking src[i] to dst[i] for four points in general position.
Homography homography_from_points(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst);

/// Even-odd point-in-polygon test; works for simple non-convex polygons.
template <typename Poly>
bool point_in_polygon(const Poly& poly, Vec2 p) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = poly[i], b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xc = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < xc) inside = !inside;
    }
  }
  return inside;
}

}  // namespace kpt
