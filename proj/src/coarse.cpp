#include "kpt/coarse.hpp"

#include <cmath>
#include <string>

#include "kpt/errors.hpp"
#include "kpt/ops.hpp"

namespace kpt {

SimilarityMatrix similarity(const EncodedSet& f1, const EncodedSet& f2) {
  if (f1.dim() != f2.dim()) {
    throw DimensionError("similarity: descriptor widths " + std::to_string(f1.dim()) + " and " +
                         std::to_string(f2.dim()) + " differ");
  }
  if (f1.segments() != f2.segments()) throw DimensionError("similarity: segment counts differ");
  const Real inv = Real(1) / std::sqrt(static_cast<Real>(f1.dim()));
  if (f1.segments() == 1) return {scale(matmul_nt(f1.features, f2.features), inv)};
  const std::size_t cols = f2.offsets[1] - f2.offsets[0];
  std::vector<Tensor> blocks;
  for (std::size_t s = 0; s < f1.segments(); ++s) {
    if (f2.offsets[s + 1] - f2.offsets[s] != cols) throw DimensionError("similarity: uneven target segments");
    if (f1.offsets[s + 1] == f1.offsets[s]) continue;
    blocks.push_back(matmul_nt(slice_rows(f1.features, f1.offsets[s], f1.offsets[s + 1]),
                               slice_rows(f2.features, f2.offsets[s], f2.offsets[s + 1])));
  }
  if (blocks.empty()) return {Tensor::zeros({0, cols})};
  return {scale(concat_rows(blocks), inv)};
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Patch:
      return "PATCH";
    case Verdict::Occluded:
      return "OCCLUDED";
    case Verdict::Rejected:
      return "REJECTED";
  }
  return "?";
}

std::vector<CoarseMatch> classify(const SimilarityMatrix& s, std::size_t grid_cols, double threshold) {
  if (!(threshold >= 0 && threshold < 1)) throw InputError("classify: threshold must lie in [0, 1)");
  const std::size_t m = s.rows(), c = s.cols();
  const auto data = s.scores.data();
  std::vector<CoarseMatch> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = data.data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - row[best]);
    CoarseMatch& cm = out[i];
    cm.keypoint = i;
    cm.column = best;
    cm.confidence = 1.0 / z;
    if (best == c - 1) {
      cm.verdict = Verdict::Occluded;
    } else if (cm.confidence < threshold) {
      cm.verdict = Verdict::Rejected;
    } else {
      cm.verdict = Verdict::Patch;
      cm.center = patch_center_of(best, grid_cols);
    }
  }
  return out;
}

double imbalance_ratio(std::size_t m, std::size_t height, std::size_t width, double occluded_fraction) {
  if (height == 0 || width == 0) throw InputError("imbalance_ratio: zero image area");
  return (1.0 - occluded_fraction) * static_cast<double>(m) * 64.0 / (static_cast<double>(height) * width);
}

}  // namespace kpt
