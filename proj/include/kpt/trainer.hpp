#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kpt/dataset.hpp"
#include "kpt/kvconfig.hpp"
#include "kpt/model.hpp"
#include "kpt/optim.hpp"

namespace kpt {

enum class StageId { SynthNoOcc, SynthOcc, Real, Fine };

const char* stage_name(StageId s);  // synth1, synth2, real, fine
StageId parse_stage(const std::string& name);
std::uint32_t stage_bit(StageId s);

struct TrainConfig {
  std::size_t batch = 8;
  std::size_t steps = 3000;
  double lr = 1e-3;
  bool cosine = true;              // decay lr to lr_floor * lr over the stage
  double lr_floor = 0.05;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lambda = 0.1;             // weight of the stage-1 L2 term
  std::size_t max_keypoints = 128; // per pair and step
  bool augment = true;             // random flips and transposes of each pair
  std::size_t log_every = 50;
  std::uint64_t seed = 1;
  double occ_min = 0, occ_max = 1; // accepted occluded fraction of the stage data
  std::string data;
  std::string out;
  std::string log;
  ModelConfig model;               // used when no checkpoint is resumed
};

/// Reads `key` or its stage override `<stage>.key` (e.g. "synth2.steps").
TrainConfig train_config_from(const KvConfig& kv, StageId stage);

struct LossReport {
  StageId stage = StageId::SynthNoOcc;
  std::size_t step = 0;
  std::optional<double> cel;
  std::optional<double> l2;
  double acc = 0;
  std::optional<double> occ_recall;
};

/// Class per keypoint: the gt patch, the OCL column (patch count) for
/// occluded points, or -1 for points dropped from the loss.
std::vector<int> coarse_targets(const ScenePair& pair, std::size_t grid_rows, std::size_t grid_cols, StageId stage);

struct LossParts {
  Tensor total;
  std::optional<double> cel;
  std::optional<double> l2;
};

/// SYNTH_NO_OCC: CE + lambda * mean squared distance (patch units) between
/// the softmax-expected patch center and gt. SYNTH_OCC and REAL: CE.
LossParts coarse_stage_loss(StageId stage, const SimilarityMatrix& s, std::span<const int> targets,
                            std::span<const Vec2> gt, std::size_t grid_cols, double lambda);
/// Mean squared Euclidean distance between predicted and target offsets.
Tensor fine_stage_loss(const Tensor& predicted, std::span<const Vec2> target);

struct StageSummary {
  std::vector<LossReport> reports;
  double occluded_fraction = 0;
  double imbalance = 0;
  std::size_t steps_run = 0;
};

using ReportSink = std::function<void(const LossReport&)>;

/// Trains one curriculum stage in place. Throws TrainingError when the
/// prerequisite stage is missing or a loss turns non-finite.
StageSummary run_stage(StageId stage, const TrainConfig& cfg, TrackerModel& model,
                       const std::vector<ScenePair>& data, const ReportSink& sink = {});

void write_loss_csv(const std::string& path, const std::vector<LossReport>& reports);

}  // namespace kpt
