#include "kpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

#include "kpt/errors.hpp"
#include "kpt/ops.hpp"

namespace kpt {

const char* stage_name(StageId s) {
  switch (s) {
    case StageId::SynthNoOcc:
      return "synth1";
    case StageId::SynthOcc:
      return "synth2";
    case StageId::Real:
      return "real";
    case StageId::Fine:
      return "fine";
  }
  return "?";
}

StageId parse_stage(const std::string& name) {
  for (auto s : {StageId::SynthNoOcc, StageId::SynthOcc, StageId::Real, StageId::Fine})
    if (name == stage_name(s)) return s;
  throw InputError("unknown stage '" + name + "' (expected synth1, synth2, real or fine)");
}

std::uint32_t stage_bit(StageId s) {
  switch (s) {
    case StageId::SynthNoOcc:
      return kStageSynthNoOcc;
    case StageId::SynthOcc:
      return kStageSynthOcc;
    case StageId::Real:
      return kStageReal;
    case StageId::Fine:
      return kStageFine;
  }
  return 0;
}

namespace {

const std::set<std::string> kTrainKeys = {"batch",       "steps",     "lr",         "optimizer",     "lambda",
                                          "max_keypoints", "log_every", "seed",     "occ_min",       "occ_max",
                                          "data",        "out",       "log",        "dim",           "widths",
                                          "depth",       "posenc_hidden", "fine_depth", "fine_hidden", "model_seed",
                                          "augment",     "lr_schedule", "lr_floor"};

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw InputError("widths: '" + item + "' is not a positive integer");
    }
    if (out.back() == 0) throw InputError("widths must be positive");
  }
  if (out.empty()) throw InputError("widths must list at least one layer");
  return out;
}

}  // namespace

TrainConfig train_config_from(const KvConfig& kv, StageId stage) {
  KvConfig flat;
  for (const auto& [k, v] : kv.values())
    if (k.find('.') == std::string::npos) flat.set(k, v);
  for (const auto& [k, v] : kv.values()) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) continue;
    const std::string key = k.substr(dot + 1);
    if (!kTrainKeys.count(key)) throw InputError("unknown config key '" + k + "'");
    if (parse_stage(k.substr(0, dot)) == stage) flat.set(key, v);
  }
  flat.require_known(kTrainKeys);

  TrainConfig c;
  c.batch = flat.get_uint("batch", c.batch);
  c.steps = flat.get_uint("steps", c.steps);
  c.lr = flat.get_double("lr", c.lr);
  const std::string schedule = flat.get_string("lr_schedule", "cosine");
  if (schedule != "cosine" && schedule != "constant") throw InputError("lr_schedule must be cosine or constant");
  c.cosine = schedule == "cosine";
  c.lr_floor = flat.get_double("lr_floor", c.lr_floor);
  const std::string opt = flat.get_string("optimizer", "adam");
  if (opt == "adam") {
    c.optimizer = OptimizerKind::Adam;
  } else if (opt == "sgd") {
    c.optimizer = OptimizerKind::Sgd;
  } else {
    throw InputError("optimizer must be adam or sgd");
  }
  c.lambda = flat.get_double("lambda", c.lambda);
  c.max_keypoints = flat.get_uint("max_keypoints", c.max_keypoints);
  c.augment = flat.get_bool("augment", c.augment);
  c.log_every = flat.get_uint("log_every", c.log_every);
  c.seed = flat.get_uint("seed", c.seed);
  c.occ_min = flat.get_double("occ_min", c.occ_min);
  c.occ_max = flat.get_double("occ_max", c.occ_max);
  c.data = flat.get_string("data", "");
  c.out = flat.get_string("out", "");
  c.log = flat.get_string("log", "");
  c.model.extractor.dim = flat.get_uint("dim", c.model.extractor.dim);
  if (flat.has("widths")) c.model.extractor.widths = parse_widths(flat.get_string("widths", ""));
  c.model.depth = flat.get_uint("depth", c.model.depth);
  c.model.posenc_hidden = flat.get_uint("posenc_hidden", c.model.posenc_hidden);
  c.model.fine.depth = flat.get_uint("fine_depth", c.model.fine.depth);
  c.model.fine.hidden = flat.get_uint("fine_hidden", c.model.fine.hidden);
  c.model.seed = flat.get_uint("model_seed", c.model.seed);
  if (c.batch == 0 || c.max_keypoints == 0 || c.log_every == 0) {
    throw InputError("batch, max_keypoints and log_every must be positive");
  }
  if (!(c.lr > 0)) throw InputError("lr must be positive");
  if (!(c.lr_floor > 0) || c.lr_floor > 1) throw InputError("lr_floor must be in (0, 1]");
  return c;
}

std::vector<int> coarse_targets(const ScenePair& pair, std::size_t grid_rows, std::size_t grid_cols, StageId stage) {
  if (stage == StageId::Fine) throw ContractError("coarse_targets: the fine stage has no class targets");
  const int ocl = static_cast<int>(grid_rows * grid_cols);
  std::vector<int> y(pair.size());
  for (std::size_t i = 0; i < pair.size(); ++i) {
    if (pair.occluded[i]) {
      y[i] = stage == StageId::SynthNoOcc ? -1 : ocl;
      continue;
    }
    const int expect = static_cast<int>(patch_index_of(pair.gt[i], grid_cols));
    if (pair.gt_patch.size() == pair.size() && pair.gt_patch[i] != expect) {
      throw InputError("keypoint " + std::to_string(i) + " has inconsistent patch label");
    }
    if (expect >= ocl) throw InputError("keypoint " + std::to_string(i) + " lies outside the grid");
    y[i] = expect;
  }
  return y;
}

LossParts coarse_stage_loss(StageId stage, const SimilarityMatrix& s, std::span<const int> targets,
                            std::span<const Vec2> gt, std::size_t grid_cols, double lambda) {
  if (stage == StageId::Fine) throw ContractError("coarse_stage_loss called for the fine stage");
  if (targets.size() != s.rows()) throw DimensionError("coarse_stage_loss: one target per similarity row required");
  LossParts parts;
  parts.total = cross_entropy(s.scores, targets);
  parts.cel = static_cast<double>(parts.total.item());
  if (stage != StageId::SynthNoOcc) return parts;

  if (gt.size() != s.rows()) throw DimensionError("coarse_stage_loss: one gt position per row required");
  const std::size_t patches = s.cols() - 1;
  std::vector<std::size_t> rows;
  std::vector<Real> target;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= patches) {
      throw ContractError("coarse_stage_loss: stage synth1 has no occluded targets");
    }
    rows.push_back(i);
    target.push_back(static_cast<Real>(gt[i].x / kPatchSize));
    target.push_back(static_cast<Real>(gt[i].y / kPatchSize));
  }
  if (rows.empty()) {
    parts.l2 = 0.0;
    return parts;
  }
  std::vector<Real> centers(2 * patches);
  for (std::size_t j = 0; j < patches; ++j) {
    const Vec2 c = patch_center_of(j, grid_cols);
    centers[2 * j] = static_cast<Real>(c.x / kPatchSize);
    centers[2 * j + 1] = static_cast<Real>(c.y / kPatchSize);
  }
  const Tensor w = softmax_rows(slice_cols(gather_rows(s.scores, rows), 0, patches));
  const Tensor expected = matmul(w, Tensor::from({patches, 2}, std::move(centers)));
  const Tensor diff = sub(expected, Tensor::from({rows.size(), 2}, std::move(target)));
  const Tensor l2 = scale(sum(mul(diff, diff)), Real(1) / static_cast<Real>(rows.size()));
  parts.l2 = static_cast<double>(l2.item());
  parts.total = add(parts.total, scale(l2, static_cast<Real>(lambda)));
  return parts;
}

Tensor fine_stage_loss(const Tensor& predicted, std::span<const Vec2> target) {
  if (predicted.rank() != 2 || predicted.dim(1) != 2 || predicted.dim(0) != target.size()) {
    throw DimensionError("fine_stage_loss: prediction " + shape_str(predicted.shape()) + " vs " +
                         std::to_string(target.size()) + " targets");
  }
  if (target.empty()) throw ContractError("fine_stage_loss: no supervised points");
  std::vector<Real> t;
  for (const auto& d : target) {
    t.push_back(static_cast<Real>(d.x));
    t.push_back(static_cast<Real>(d.y));
  }
  const Tensor diff = sub(predicted, Tensor::from({target.size(), 2}, std::move(t)));
  return scale(sum(mul(diff, diff)), Real(1) / static_cast<Real>(target.size()));
}

namespace {

void check_prerequisite(StageId stage, const TrackerModel& model) {
  auto need = [&](std::uint32_t bit, const char* what) {
    if (!model.has_stage(bit)) {
      throw TrainingError(std::string("stage ") + stage_name(stage) + " requires a checkpoint that completed " + what);
    }
  };
  switch (stage) {
    case StageId::SynthNoOcc:
      break;
    case StageId::SynthOcc:
      need(kStageSynthNoOcc, "synth1");
      break;
    case StageId::Real:
      need(kStageSynthOcc, "synth2");
      break;
    case StageId::Fine:
      need(kStageSynthNoOcc, "a coarse stage");
      break;
  }
}

bool is_neighbor_patch(std::size_t a, std::size_t b, std::size_t cols) {
  const long ra = static_cast<long>(a / cols), ca = static_cast<long>(a % cols);
  const long rb = static_cast<long>(b / cols), cb = static_cast<long>(b % cols);
  return std::abs(ra - rb) <= 1 && std::abs(ca - cb) <= 1;
}

// Keypoints of one pair that enter a training step.
struct PairView {
  std::shared_ptr<const ScenePair> pair;
  std::vector<std::size_t> kept;
  std::vector<Vec2> keypoints;
};

PairView select_keypoints(std::shared_ptr<const ScenePair> pair, StageId stage, std::size_t cap) {
  PairView v{std::move(pair), {}, {}};
  for (std::size_t i = 0; i < v.pair->size() && v.kept.size() < cap; ++i) {
    if (stage == StageId::SynthNoOcc && v.pair->occluded[i]) continue;
    v.kept.push_back(i);
    v.keypoints.push_back(v.pair->keypoints[i]);
  }
  return v;
}

}  // namespace

StageSummary run_stage(StageId stage, const TrainConfig& cfg, TrackerModel& model,
                       const std::vector<ScenePair>& data, const ReportSink& sink) {
  check_prerequisite(stage, model);
  if (data.empty()) throw TrainingError(std::string("stage ") + stage_name(stage) + " has no training pairs");
  const std::size_t h = data[0].img1.height(), w = data[0].img1.width();
  for (const auto& p : data) {
    if (p.img1.height() != h || p.img1.width() != w || p.img2.height() != h || p.img2.width() != w) {
      throw InputError("training pairs must share one image size");
    }
  }

  StageSummary summary;
  std::size_t total = 0, occ = 0;
  for (const auto& p : data) {
    total += p.size();
    occ += static_cast<std::size_t>(std::count(p.occluded.begin(), p.occluded.end(), true));
  }
  summary.occluded_fraction = total ? static_cast<double>(occ) / static_cast<double>(total) : 0.0;
  summary.imbalance = imbalance_ratio(std::min(total / data.size(), cfg.max_keypoints), h, w,
                                      summary.occluded_fraction);
  if (stage == StageId::SynthOcc &&
      (summary.occluded_fraction < cfg.occ_min || summary.occluded_fraction > cfg.occ_max)) {
    throw TrainingError("stage synth2 data has occluded fraction " + std::to_string(summary.occluded_fraction) +
                        " outside [" + std::to_string(cfg.occ_min) + ", " + std::to_string(cfg.occ_max) + "]");
  }
  if (cfg.steps == 0) return summary;

  ParamStore& store = model.params();
  const bool fine = stage == StageId::Fine;
  store.set_trainable("", !fine);
  store.set_trainable("fine.", fine);
  std::vector<std::pair<std::string, Tensor>> trainable;
  for (const auto& e : store.entries())
    if (e.second.requires_grad()) trainable.push_back(e);
  OptimizerOptions oo;
  oo.kind = cfg.optimizer;
  oo.lr = static_cast<Real>(cfg.lr);
  Optimizer opt(trainable, oo);

  struct Restore {
    ParamStore& s;
    ~Restore() { s.set_trainable("", true); }
  } restore_trainable{store};

  const std::size_t grid_rows = h / kPatchSize, grid_cols = w / kPatchSize;
  const std::size_t ocl = grid_rows * grid_cols;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::uint64_t batch_seed = derive_seed(cfg.seed, step);
    if (cfg.cosine) {
      const double t = cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 0.0;
      const double scale = cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (1 + std::cos(std::numbers::pi * t));
      opt.set_lr(static_cast<Real>(cfg.lr * scale));
    }
    std::mt19937_64 rng(batch_seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);

    std::vector<PairView> views;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const ScenePair& src = data[pick(rng)];
      std::shared_ptr<const ScenePair> pair(std::shared_ptr<const ScenePair>(), &src);
      if (cfg.augment) {
        const unsigned code = std::uniform_int_distribution<unsigned>(0, h == w ? 7 : 3)(rng);
        if (code != 0) pair = std::make_shared<const ScenePair>(dihedral_view(src, code));
      }
      PairView v = select_keypoints(std::move(pair), stage, cfg.max_keypoints);
      if (!v.kept.empty()) views.push_back(std::move(v));
    }
    if (views.empty()) continue;
    std::vector<PairInput> inputs;
    std::vector<int> targets;
    std::vector<Vec2> gts;
    for (const auto& v : views) {
      inputs.push_back({&v.pair->img1, &v.pair->img2, v.keypoints});
      const auto y = coarse_targets(*v.pair, grid_rows, grid_cols, fine ? StageId::SynthOcc : stage);
      for (std::size_t i : v.kept) {
        targets.push_back(y[i]);
        gts.push_back(v.pair->gt[i]);
      }
    }

    opt.zero_grads();
    LossReport report;
    report.stage = stage;
    report.step = step + 1;
    Tensor loss;
    CoarseForward cf;
    if (fine) {
      NoGradGuard guard;
      cf = model.coarse_forward(inputs);
    } else {
      cf = model.coarse_forward(inputs);
    }

    // Batch statistics from the argmax over all columns.
    const auto scores = cf.sim.scores.data();
    const std::size_t cols = cf.sim.cols();
    std::size_t seen = 0, right = 0, occ_seen = 0, occ_hit = 0;
    std::vector<std::size_t> argmax(targets.size());
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const Real* row = scores.data() + r * cols;
      argmax[r] = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
      if (targets[r] < 0) continue;
      ++seen;
      right += argmax[r] == static_cast<std::size_t>(targets[r]);
      if (static_cast<std::size_t>(targets[r]) == ocl) {
        ++occ_seen;
        occ_hit += argmax[r] == ocl;
      }
    }
    report.acc = seen ? static_cast<double>(right) / static_cast<double>(seen) : 0.0;
    if (stage != StageId::SynthNoOcc && occ_seen) {
      report.occ_recall = static_cast<double>(occ_hit) / static_cast<double>(occ_seen);
    }

    if (fine) {
      std::vector<FineQuery> queries;
      std::vector<Vec2> offsets;
      std::size_t row = 0;
      for (std::size_t p = 0; p < views.size(); ++p) {
        for (std::size_t k = 0; k < views[p].kept.size(); ++k, ++row) {
          const int y = targets[row];
          if (y < 0 || static_cast<std::size_t>(y) == ocl || argmax[row] == ocl) continue;
          if (!is_neighbor_patch(argmax[row], static_cast<std::size_t>(y), grid_cols)) continue;
          const Vec2 d = gts[row] - patch_center_of(argmax[row], grid_cols);
          queries.push_back({row, p, argmax[row]});
          offsets.push_back({std::clamp(d.x, -kMaxOffset, kMaxOffset), std::clamp(d.y, -kMaxOffset, kMaxOffset)});
        }
      }
      if (queries.empty()) continue;
      loss = fine_stage_loss(model.fine_forward(cf, queries).offsets, offsets);
      report.l2 = static_cast<double>(loss.item());
    } else {
      LossParts parts = coarse_stage_loss(stage, cf.sim, targets, gts, grid_cols, cfg.lambda);
      loss = parts.total;
      report.cel = parts.cel;
      report.l2 = parts.l2;
    }
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw TrainingError(std::string("non-finite loss in stage ") + stage_name(stage) + " at step " +
                          std::to_string(step + 1) + " (batch seed " + std::to_string(batch_seed) + ")");
    }
    loss.backward();
    opt.step();
    ++summary.steps_run;
    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      summary.reports.push_back(report);
      if (sink) sink(report);
    }
  }
  model.mark_stage(stage_bit(stage));
  return summary;
}

void write_loss_csv(const std::string& path, const std::vector<LossReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss log '" + path + "'");
  out.precision(9);
  out << "step,stage,cel,l2,acc,occ_recall\n";
  for (const auto& r : reports) {
    out << r.step << ',' << stage_name(r.stage) << ',';
    if (r.cel) out << *r.cel;
    out << ',';
    if (r.l2) out << *r.l2;
    out << ',' << r.acc << ',';
    if (r.occ_recall) out << *r.occ_recall;
    out << '\n';
  }
}

}  // namespace kpt
