#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "kpt/attention.hpp"
#include "kpt/features.hpp"

namespace kpt {

/// Scores of M keypoints against every patch plus the OCL column (last).
struct SimilarityMatrix {
  Tensor scores;  // [M x C]

  std::size_t rows() const { return scores.dim(0); }
  std::size_t cols() const { return scores.dim(1); }
  std::size_t ocl_column() const { return cols() - 1; }
};

/// S[i][j] = <f1_i, f2_j> / sqrt(D). With several segments the per-segment
/// blocks are stacked by rows; every segment of `f2` must have the same length.
SimilarityMatrix similarity(const EncodedSet& f1, const EncodedSet& f2);

enum class Verdict { Patch, Occluded, Rejected };

const char* verdict_name(Verdict v);

struct CoarseMatch {
  std::size_t keypoint = 0;
  Verdict verdict = Verdict::Rejected;
  double confidence = 0;         // softmax value at the argmax column
  std::size_t column = 0;        // argmax column (the OCL column for Occluded)
  std::optional<Vec2> center;    // present iff Patch
};

/// Row softmax, argmax, OCL -> Occluded, confidence < threshold -> Rejected.
/// `grid_cols` maps patch indices to centers.
std::vector<CoarseMatch> classify(const SimilarityMatrix& s, std::size_t grid_cols, double threshold = 0.2);

/// Expected fraction of patches that hold a visible keypoint:
/// (1 - occluded_fraction) * M * 64 / (H * W).
double imbalance_ratio(std::size_t m, std::size_t height, std::size_t width, double occluded_fraction);

}  // namespace kpt
