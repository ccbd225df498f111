#include "kpt/geometry.hpp"

#include <string>

#include "kpt/errors.hpp"

namespace kpt {

Homography Homography::from(const std::array<double, 9>& m) {
  if (std::abs(m[8]) < 1e-12) throw InputError("homography with h22 == 0 cannot be normalized");
  Homography out;
  for (std::size_t i = 0; i < 9; ++i) out.h[i] = m[i] / m[8];
  if (std::abs(out.determinant()) <= 1e-8) throw InputError("homography is singular");
  return out;
}

double Homography::determinant() const {
  const auto& m = h;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  const auto& m = h;
  const double det = determinant();
  if (std::abs(det) <= 1e-8) throw InputError("homography is singular");
  // adjugate / det
  std::array<double, 9> inv{
      m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
      m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
      m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3],
  };
  for (auto& v : inv) v /= det;
  return from(inv);
}

Homography Homography::compose(const Homography& other) const {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += (*this)(r, k) * other(k, c);
      out[static_cast<std::size_t>(r * 3 + c)] = acc;
    }
  return from(out);
}

Vec2 warp_point(const Homography& hm, Vec2 p) {
  const auto& m = hm.h;
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (std::abs(w) <= 1e-8) throw InputError("point maps to infinity under the homography");
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography homography_from_points(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst) {
  // 8x8 DLT system with h22 fixed to 1, solved by Gaussian elimination with
  // partial pivoting.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) throw InputError("degenerate point configuration for a homography");
    if (piv != col)
      for (int c = 0; c < 9; ++c) std::swap(a[piv][c], a[col][c]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::array<double, 9> h{};
  for (int i = 0; i < 8; ++i) h[static_cast<std::size_t>(i)] = a[i][8] / a[i][i];
  h[8] = 1;
  return Homography::from(h);
}

}  // namespace kpt
