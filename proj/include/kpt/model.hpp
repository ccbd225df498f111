#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kpt/checkpoint.hpp"
#include "kpt/coarse.hpp"
#include "kpt/fine.hpp"

namespace kpt {

struct ModelConfig {
  ExtractorConfig extractor;
  std::size_t depth = 2;           // coarse AAM blocks
  std::size_t posenc_hidden = 32;
  FineConfig fine;
  std::uint64_t seed = 1;
};

/// Bits recorded in "meta.stage" once a training stage has completed.
enum StageBit : std::uint32_t {
  kStageSynthNoOcc = 1u << 0,
  kStageSynthOcc = 1u << 1,
  kStageReal = 1u << 2,
  kStageFine = 1u << 3,
};

/// One image pair and the keypoints to track from the first image.
struct PairInput {
  const Image* img1 = nullptr;
  const Image* img2 = nullptr;
  std::span<const Vec2> keypoints;
};

/// Coarse stage outputs for a batch of equally sized pairs. Keypoint rows of
/// all pairs are stacked in pair order.
struct CoarseForward {
  std::size_t grid_rows = 0, grid_cols = 0;
  std::vector<std::size_t> kp_offsets;  // pair p owns rows [kp_offsets[p], kp_offsets[p+1])
  Tensor descriptors;                   // sampled CNN descriptors of img1
  EncodedSet f1, f2;                    // after the AAM; f2 carries OCL
  Tensor grid2;                         // img2 CNN rows, pair p at rows [p*P, (p+1)*P)
  SimilarityMatrix sim;

  std::size_t patch_count() const { return grid_rows * grid_cols; }
};

/// A keypoint row of a CoarseForward and the patch whose window is refined.
struct FineQuery {
  std::size_t row = 0;
  std::size_t pair = 0;
  std::size_t patch = 0;
};

struct TrackOptions {
  double threshold = 0.2;
  bool use_fine = true;
};

struct TrackResult {
  std::size_t keypoint = 0;
  Verdict verdict = Verdict::Rejected;
  double confidence = 0;
  std::size_t column = 0;        // argmax column, whatever the verdict
  std::optional<std::size_t> patch;
  std::optional<Vec2> coarse;    // patch center
  std::optional<Vec2> position;  // refined when the fine module ran, else the center
};

class TrackerModel {
 public:
  explicit TrackerModel(const ModelConfig& cfg = {});

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::uint32_t stages() const { return stages_; }
  void mark_stage(std::uint32_t bit) { stages_ |= bit; }
  bool has_stage(std::uint32_t bit) const { return (stages_ & bit) != 0; }

  const ExtractorParams& extractor() const { return cnn_; }
  const FineParams& fine() const { return fine_; }

  std::vector<CheckpointEntry> to_checkpoint() const;
  static TrackerModel from_checkpoint(const std::vector<CheckpointEntry>& entries);
  void save(const std::string& path) const;
  static TrackerModel load(const std::string& path);

  CoarseForward coarse_forward(std::span<const PairInput> pairs) const;
  FineOutput fine_forward(const CoarseForward& cf, std::span<const FineQuery> queries) const;

  /// Inference for one pair without recording gradients.
  std::vector<TrackResult> track(const Image& img1, const Image& img2, std::span<const Vec2> keypoints,
                                 const TrackOptions& opts = {}) const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  ExtractorParams cnn_;
  MlpParams posenc_;
  AamParams aam_;
  Tensor ocl_;
  FineParams fine_;
  std::uint32_t stages_ = 0;
};

}  // namespace kpt
