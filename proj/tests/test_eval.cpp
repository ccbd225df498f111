#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "kpt/corners.hpp"
#include "kpt/errors.hpp"
#include "kpt/eval.hpp"
#include "kpt/render.hpp"

using namespace kpt;

namespace {

TrackResult patch_at(std::size_t k, Vec2 pos, std::size_t grid_cols = 8) {
  TrackResult r;
  r.keypoint = k;
  r.verdict = Verdict::Patch;
  r.confidence = 0.9;
  r.column = patch_index_of(pos, grid_cols);
  r.patch = r.column;
  r.coarse = patch_center_of(r.column, grid_cols);
  r.position = pos;
  return r;
}

TrackResult occluded(std::size_t k) {
  TrackResult r;
  r.keypoint = k;
  r.verdict = Verdict::Occluded;
  r.column = 64;
  r.confidence = 0.9;
  return r;
}

std::vector<std::size_t> all_of(const ScenePair& p) {
  std::vector<std::size_t> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

std::size_t count_color(const RgbImage& img, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.rgb.size(); i += 3)
    n += img.rgb[i] == r && img.rgb[i + 1] == g && img.rgb[i + 2] == b;
  return n;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.extractor.widths = {4, 8, 8};
  m.extractor.dim = 16;
  m.depth = 1;
  m.posenc_hidden = 8;
  m.fine = FineConfig{1, 8};
  return m;
}

}  // namespace

TEST(IsCorrect, StrictSixPixelBoundary) {
  const Vec2 gt{20, 20};
  EXPECT_TRUE(is_correct(patch_at(0, {25.999, 20}), gt, false));
  EXPECT_FALSE(is_correct(patch_at(0, {26.0, 20}), gt, false));
  EXPECT_FALSE(is_correct(patch_at(0, {20, 20}), gt, true));
  TrackResult rejected = patch_at(0, {20, 20});
  rejected.verdict = Verdict::Rejected;
  EXPECT_FALSE(is_correct(rejected, gt, false));
}

TEST(Score, OracleResultsAreAllCorrect) {
  SynthConfig cfg;
  const std::vector<ScenePair> pairs{gen_synthetic_pair(cfg, 1), gen_synthetic_pair(cfg, 2)};
  std::vector<std::vector<std::size_t>> sampled;
  std::vector<std::vector<TrackResult>> results;
  std::size_t visible = 0;
  for (const auto& p : pairs) {
    sampled.push_back(all_of(p));
    std::vector<TrackResult> r;
    for (std::size_t i = 0; i < p.size(); ++i) {
      r.push_back(p.occluded[i] ? occluded(i) : patch_at(i, p.gt[i]));
      visible += !p.occluded[i];
    }
    results.push_back(std::move(r));
  }
  const auto m = score(pairs, sampled, results, "oracle");
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.correct, visible);
  EXPECT_EQ(m.visible, visible);
  EXPECT_EQ(m.occ_precision, 1.0);
  EXPECT_EQ(m.occ_recall, 1.0);
  EXPECT_EQ(m.coarse_accuracy, 1.0);
  EXPECT_EQ(m.mean_error, 0.0);
  EXPECT_DOUBLE_EQ(m.correct_mean, static_cast<double>(visible) / 2);
}

TEST(Score, AllOccludedPredictions) {
  SynthConfig cfg;
  const std::vector<ScenePair> pairs{gen_synthetic_pair(cfg, 3)};
  std::vector<TrackResult> r;
  for (std::size_t i = 0; i < pairs[0].size(); ++i) r.push_back(occluded(i));
  const auto m = score(pairs, {all_of(pairs[0])}, {r}, "occ");
  EXPECT_EQ(m.emitted, 0u);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_EQ(m.correct, 0u);
  EXPECT_EQ(m.occ_recall, 1.0);
  EXPECT_LE(m.occ_precision, 1.0);
}

TEST(Score, CountsNeverExceedSamples) {
  SynthConfig cfg;
  const std::vector<ScenePair> pairs{gen_synthetic_pair(cfg, 4)};
  std::vector<TrackResult> r;
  for (std::size_t i = 0; i < pairs[0].size(); ++i) r.push_back(patch_at(i, pairs[0].keypoints[i]));
  const auto m = score(pairs, {all_of(pairs[0])}, {r}, "identity");
  EXPECT_LE(m.correct, m.emitted);
  EXPECT_LE(m.emitted, m.sampled);
  EXPECT_GE(m.accuracy, 0.0);
  EXPECT_LE(m.accuracy, 1.0);
}

TEST(SampleKeypoints, CapKeepsStrongestResponses) {
  SynthConfig cfg;
  cfg.height = cfg.width = 128;
  ScenePair p = gen_synthetic_pair(cfg, 5);
  // Pad to 600 candidates on a regular lattice.
  p.keypoints.clear();
  p.gt.clear();
  p.occluded.clear();
  for (std::size_t i = 0; i < 600; ++i) {
    const Vec2 k{0.5 + static_cast<double>(i % 25) * 5, 0.5 + static_cast<double>(i / 25) * 5};
    p.keypoints.push_back(k);
    p.gt.push_back(k);
    p.occluded.push_back(false);
  }
  assign_patches(p);
  const auto idx = sample_keypoints(p, 512);
  ASSERT_EQ(idx.size(), 512u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 512u);
  const auto resp = min_eigen_response(p.img1, CornerOptions{}.window_radius);
  auto at = [&](std::size_t i) {
    return resp[static_cast<std::size_t>(p.keypoints[i].y) * 128 + static_cast<std::size_t>(p.keypoints[i].x)];
  };
  double weakest_kept = 1e300;
  for (auto i : idx) weakest_kept = std::min(weakest_kept, at(i));
  const std::set<std::size_t> kept(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 600; ++i)
    if (!kept.count(i)) {
      EXPECT_LE(at(i), weakest_kept);
    }
  EXPECT_EQ(sample_keypoints(p, 1000).size(), 600u);
}

TEST(Render, ZeroMatchesGivesBareComposite) {
  SynthConfig cfg;
  const ScenePair p = gen_synthetic_pair(cfg, 6);
  const RgbImage img = render_matches(p, {}, {});
  EXPECT_EQ(img.width, 2 * 64 + kGutter);
  EXPECT_EQ(img.height, 64u);
  EXPECT_EQ(count_color(img, 0, 255, 0), 0u);
  EXPECT_EQ(count_color(img, 255, 0, 0), 0u);
}

TEST(Render, OneCorrectMatchDrawsOneGreenSegment) {
  SynthConfig cfg;
  ScenePair p = gen_synthetic_pair(cfg, 7);
  ASSERT_GT(p.size(), 0u);
  std::size_t i = 0;
  while (i < p.size() && p.occluded[i]) ++i;
  ASSERT_LT(i, p.size());
  const RgbImage img = render_matches(p, {i}, {patch_at(i, p.gt[i])});
  const long dx = std::abs(static_cast<long>(std::floor(p.gt[i].x)) + static_cast<long>(64 + kGutter) -
                           static_cast<long>(std::floor(p.keypoints[i].x)));
  const long dy = std::abs(static_cast<long>(std::floor(p.gt[i].y)) - static_cast<long>(std::floor(p.keypoints[i].y)));
  EXPECT_EQ(count_color(img, 0, 255, 0), static_cast<std::size_t>(std::max(dx, dy) + 1));
  EXPECT_EQ(count_color(img, 255, 0, 0), 0u);
  EXPECT_EQ(render_matches(p, {i}, {patch_at(i, p.gt[i])}), img);
}

TEST(Render, OccludedVerdictDrawsBlueCross) {
  SynthConfig cfg;
  const ScenePair p = gen_synthetic_pair(cfg, 8);
  const RgbImage img = render_matches(p, {0}, {occluded(0)});
  EXPECT_GT(count_color(img, 0, 0, 255), 0u);
  EXPECT_EQ(count_color(img, 0, 255, 0), 0u);
}

TEST(MatchesCsv, ColumnsAndEmptyFields) {
  const std::vector<Vec2> kps{{1.5, 2.5}, {3, 4}};
  const auto csv = matches_csv(kps, {patch_at(0, {12, 4}), occluded(1)});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "kp_index,x1,y1,verdict,x2,y2,confidence");
  EXPECT_NE(csv.find("0,1.5,2.5,PATCH,12,4,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("1,3,4,OCCLUDED,,,"), std::string::npos) << csv;
}

TEST(Evaluate, PureFunctionOfInputs) {
  SynthConfig cfg;
  const std::vector<ScenePair> pairs{gen_synthetic_pair(cfg, 9), gen_synthetic_pair(cfg, 10)};
  const TrackerModel model(tiny_model());
  EvalConfig ec;
  const auto a = evaluate(model, pairs, ec), b = evaluate(model, pairs, ec);
  EXPECT_EQ(metrics_csv({a.metrics}), metrics_csv({b.metrics}));
  ASSERT_EQ(a.results.size(), 2u);
  for (std::size_t p = 0; p < 2; ++p)
    EXPECT_EQ(matches_csv(pairs[p].keypoints, a.results[p]), matches_csv(pairs[p].keypoints, b.results[p]));
}

TEST(Evaluate, ZeroFineHeadLeavesCentersInPlace) {
  SynthConfig cfg;
  const std::vector<ScenePair> pairs{gen_synthetic_pair(cfg, 11)};
  TrackerModel model(tiny_model());
  for (Tensor t : model.fine().head.weights) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0f);
  for (Tensor t : model.fine().head.biases) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0f);
  EvalConfig ec;
  ec.threshold = 0;
  const auto cmp = compare_coarse_vs_fine(model, pairs, ec);
  EXPECT_EQ(cmp.accuracy_delta(), 0.0);
  EXPECT_EQ(cmp.error_delta(), 0.0);
  const std::string table = metrics_table({cmp.coarse, cmp.fine});
  EXPECT_NE(table.find(cmp.coarse.tag), std::string::npos);
  EXPECT_NE(table.find(cmp.fine.tag), std::string::npos);
}
