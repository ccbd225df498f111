#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kpt/datagen.hpp"
#include "kpt/model.hpp"

namespace kpt {

inline constexpr double kCorrectRadius = 6.0;

struct EvalConfig {
  double threshold = 0.2;
  std::size_t max_keypoints = 512;
  bool use_fine = true;
  std::string tag = "eval";
};

struct EvalMetrics {
  std::string tag;
  std::size_t pairs = 0;
  std::size_t sampled = 0;   // keypoints evaluated
  std::size_t visible = 0;   // of which gt is visible
  std::size_t emitted = 0;   // PATCH verdicts
  std::size_t correct = 0;
  double accuracy = 0;       // correct / emitted
  double correct_mean = 0;   // correct per pair
  double occ_precision = 0;  // 0 when nothing was predicted occluded
  double occ_recall = 0;     // 0 when nothing is occluded
  double coarse_accuracy = 0;  // visible points whose argmax is the gt patch
  double mean_error = 0;       // over visible points with a PATCH verdict
  std::size_t localized = 0;
};

/// True iff the result is a PATCH match within strictly less than `radius`
/// pixels of a visible ground truth.
bool is_correct(const TrackResult& r, Vec2 gt, bool occluded, double radius = kCorrectRadius);

/// Indices of at most `cap` keypoints of img1, strongest Shi-Tomasi response
/// first when the pair holds more; returned in ascending index order.
std::vector<std::size_t> sample_keypoints(const ScenePair& pair, std::size_t cap);

/// Accumulates metrics from per-pair results; results[p][k] belongs to
/// keypoint sampled[p][k] of pairs[p].
EvalMetrics score(const std::vector<ScenePair>& pairs, const std::vector<std::vector<std::size_t>>& sampled,
                  const std::vector<std::vector<TrackResult>>& results, const std::string& tag);

struct EvalRun {
  EvalMetrics metrics;
  std::vector<std::vector<std::size_t>> sampled;
  std::vector<std::vector<TrackResult>> results;
};

EvalRun evaluate(const TrackerModel& model, const std::vector<ScenePair>& pairs, const EvalConfig& cfg);

struct Comparison {
  EvalMetrics coarse, fine;
  double accuracy_delta() const { return fine.accuracy - coarse.accuracy; }
  double error_delta() const { return fine.mean_error - coarse.mean_error; }
};

Comparison compare_coarse_vs_fine(const TrackerModel& model, const std::vector<ScenePair>& pairs,
                                  const EvalConfig& cfg);

std::string metrics_table(const std::vector<EvalMetrics>& rows);
std::string metrics_csv(const std::vector<EvalMetrics>& rows);

/// Match dump: kp_index,x1,y1,verdict,x2,y2,confidence.
std::string matches_csv(std::span<const Vec2> keypoints, const std::vector<TrackResult>& results);

}  // namespace kpt
