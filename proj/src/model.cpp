#include "kpt/model.hpp"

#include <tuple>

#include "kpt/errors.hpp"
#include "kpt/ops.hpp"

namespace kpt {

namespace {

constexpr const char* kArchEntry = "meta.arch";
constexpr const char* kStageEntry = "meta.stage";

}  // namespace

TrackerModel::TrackerModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.extractor.widths.empty() || cfg.extractor.dim == 0) throw InputError("model: empty extractor");
  Rng rng(cfg.seed);
  const std::size_t d = cfg.extractor.dim;
  cnn_ = make_extractor(store_, "cnn", cfg.extractor, rng);
  posenc_ = make_mlp(store_, "posenc", {2, cfg.posenc_hidden, d}, rng);
  aam_ = make_aam(store_, "aam", d, cfg.depth, rng);
  ocl_ = store_.create_uniform("aam.ocl", {d}, d, rng);
  fine_ = make_fine(store_, "fine", d, cfg.fine, rng);
}

std::vector<CheckpointEntry> TrackerModel::to_checkpoint() const {
  std::vector<CheckpointEntry> out;
  CheckpointEntry arch{kArchEntry, {}, {}};
  arch.values = {static_cast<float>(cfg_.extractor.dim), static_cast<float>(cfg_.depth),
                 static_cast<float>(cfg_.posenc_hidden), static_cast<float>(cfg_.fine.depth),
                 static_cast<float>(cfg_.fine.hidden)};
  for (auto w : cfg_.extractor.widths) arch.values.push_back(static_cast<float>(w));
  arch.dims = {static_cast<std::uint32_t>(arch.values.size())};
  out.push_back(std::move(arch));
  out.push_back({kStageEntry, {1}, {static_cast<float>(stages_)}});
  for (auto& e : snapshot(store_)) out.push_back(std::move(e));
  return out;
}

TrackerModel TrackerModel::from_checkpoint(const std::vector<CheckpointEntry>& entries) {
  const CheckpointEntry* arch = nullptr;
  const CheckpointEntry* stage = nullptr;
  std::vector<CheckpointEntry> params;
  for (const auto& e : entries) {
    if (e.name == kArchEntry) {
      arch = &e;
    } else if (e.name == kStageEntry) {
      stage = &e;
    } else {
      params.push_back(e);
    }
  }
  if (!arch || arch->values.size() < 6) throw InputError("checkpoint lacks a valid meta.arch entry");
  ModelConfig cfg;
  auto as_size = [](float v) { return static_cast<std::size_t>(v); };
  cfg.extractor.dim = as_size(arch->values[0]);
  cfg.depth = as_size(arch->values[1]);
  cfg.posenc_hidden = as_size(arch->values[2]);
  cfg.fine.depth = as_size(arch->values[3]);
  cfg.fine.hidden = as_size(arch->values[4]);
  cfg.extractor.widths.clear();
  for (std::size_t i = 5; i < arch->values.size(); ++i) cfg.extractor.widths.push_back(as_size(arch->values[i]));
  TrackerModel model(cfg);
  restore(model.store_, params);
  if (stage && !stage->values.empty()) model.stages_ = static_cast<std::uint32_t>(stage->values[0]);
  return model;
}

void TrackerModel::save(const std::string& path) const { write_checkpoint(path, to_checkpoint()); }

TrackerModel TrackerModel::load(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

CoarseForward TrackerModel::coarse_forward(std::span<const PairInput> pairs) const {
  if (pairs.empty()) throw InputError("coarse_forward: no pairs");
  const std::size_t h = pairs[0].img1->height(), w = pairs[0].img1->width();
  std::vector<const Image*> images;
  for (const auto& p : pairs) images.push_back(p.img1);
  for (const auto& p : pairs) images.push_back(p.img2);
  for (const Image* img : images) {
    check_extractable(*img);
    if (img->height() != h || img->width() != w) throw InputError("coarse_forward: images differ in size");
  }
  const std::size_t b = pairs.size();
  CoarseForward cf;
  cf.grid_rows = h / kPatchSize;
  cf.grid_cols = w / kPatchSize;
  const std::size_t pc = cf.patch_count();
  const Tensor rows = extract_dense_rows(images_to_tensor(images), cnn_);

  std::vector<Vec2> kp_all;
  std::vector<std::size_t> tap_idx;
  std::vector<Real> tap_w;
  cf.kp_offsets.push_back(0);
  for (std::size_t p = 0; p < b; ++p) {
    const auto taps = bilinear_taps(cf.grid_rows, cf.grid_cols, pairs[p].keypoints, h, w, p * pc);
    tap_idx.insert(tap_idx.end(), taps.indices.begin(), taps.indices.end());
    tap_w.insert(tap_w.end(), taps.weights.begin(), taps.weights.end());
    kp_all.insert(kp_all.end(), pairs[p].keypoints.begin(), pairs[p].keypoints.end());
    cf.kp_offsets.push_back(kp_all.size());
  }
  cf.descriptors = weighted_gather(rows, tap_idx, tap_w, 4);
  cf.grid2 = slice_rows(rows, b * pc, 2 * b * pc);

  const auto centers = DenseFeatureGrid{cf.grid_rows, cf.grid_cols, 0, {}}.centers();
  std::vector<Vec2> center_all;
  center_all.reserve(b * pc);
  for (std::size_t p = 0; p < b; ++p) center_all.insert(center_all.end(), centers.begin(), centers.end());

  EncodedSet s1, s2;
  s1.features = encode_positions(cf.descriptors, kp_all, static_cast<double>(w), static_cast<double>(h), posenc_);
  s1.offsets = cf.kp_offsets;
  s2.features = encode_positions(cf.grid2, center_all, static_cast<double>(w), static_cast<double>(h), posenc_);
  for (std::size_t p = 0; p <= b; ++p) s2.offsets.push_back(p * pc);
  s2 = append_ocl(s2, ocl_);

  std::tie(cf.f1, cf.f2) = aam_forward(s1, s2, aam_);
  cf.sim = similarity(cf.f1, cf.f2);
  return cf;
}

FineOutput TrackerModel::fine_forward(const CoarseForward& cf, std::span<const FineQuery> queries) const {
  if (queries.empty()) throw InputError("fine_forward: no queries");
  const std::size_t pc = cf.patch_count();
  std::vector<std::size_t> rows, cells;
  FineBatch batch;
  for (const auto& q : queries) {
    rows.push_back(q.row);
    const NeighborWindow win = gather_neighbors(cf.grid_rows, cf.grid_cols, q.patch);
    for (std::size_t k = 0; k < kWindow; ++k) {
      cells.push_back(q.pair * pc + win.cells[k]);
      batch.offsets.push_back(win.offsets[k]);
      batch.valid.push_back(win.valid[k]);
    }
  }
  batch.original = gather_rows(cf.descriptors, rows);
  batch.attended = gather_rows(cf.f1.features, rows);
  batch.neighbors = gather_rows(cf.grid2, cells);
  return refine_batch(batch, fine_);
}

std::vector<TrackResult> TrackerModel::track(const Image& img1, const Image& img2, std::span<const Vec2> keypoints,
                                             const TrackOptions& opts) const {
  NoGradGuard guard;
  std::vector<TrackResult> out(keypoints.size());
  if (keypoints.empty()) return out;
  const PairInput pair{&img1, &img2, keypoints};
  const CoarseForward cf = coarse_forward(std::span<const PairInput>(&pair, 1));
  const auto matches = classify(cf.sim, cf.grid_cols, opts.threshold);
  std::vector<FineQuery> queries;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    TrackResult& r = out[i];
    r.keypoint = i;
    r.verdict = matches[i].verdict;
    r.confidence = matches[i].confidence;
    r.column = matches[i].column;
    if (r.verdict != Verdict::Patch) continue;
    r.patch = matches[i].column;
    r.coarse = matches[i].center;
    r.position = matches[i].center;
    queries.push_back({i, 0, matches[i].column});
  }
  if (opts.use_fine && !queries.empty()) {
    const FineOutput fo = fine_forward(cf, queries);
    const auto d = fo.offsets.data();
    for (std::size_t q = 0; q < queries.size(); ++q) {
      TrackResult& r = out[queries[q].row];
      r.position = compose(*r.coarse, {static_cast<double>(d[2 * q]), static_cast<double>(d[2 * q + 1])});
    }
  }
  return out;
}

}  // namespace kpt
