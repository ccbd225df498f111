#include "kpt/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "kpt/corners.hpp"
#include "kpt/errors.hpp"

namespace kpt {

bool is_correct(const TrackResult& r, Vec2 gt, bool occluded, double radius) {
  if (occluded || r.verdict != Verdict::Patch || !r.position) return false;
  return (*r.position - gt).norm() < radius;
}

std::vector<std::size_t> sample_keypoints(const ScenePair& pair, std::size_t cap) {
  std::vector<std::size_t> idx(pair.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (pair.size() <= cap) return idx;
  const auto resp = min_eigen_response(pair.img1, CornerOptions{}.window_radius);
  const std::size_t h = pair.img1.height(), w = pair.img1.width();
  auto score_of = [&](std::size_t i) {
    const auto c = std::min(static_cast<std::size_t>(std::max(0.0, pair.keypoints[i].x)), w - 1);
    const auto r = std::min(static_cast<std::size_t>(std::max(0.0, pair.keypoints[i].y)), h - 1);
    return resp[r * w + c];
  };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score_of(a) > score_of(b); });
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

EvalMetrics score(const std::vector<ScenePair>& pairs, const std::vector<std::vector<std::size_t>>& sampled,
                  const std::vector<std::vector<TrackResult>>& results, const std::string& tag) {
  if (sampled.size() != pairs.size() || results.size() != pairs.size()) {
    throw DimensionError("score: need samples and results for every pair");
  }
  EvalMetrics m;
  m.tag = tag;
  m.pairs = pairs.size();
  std::size_t occ_true = 0, occ_pred = 0, occ_hit = 0, coarse_right = 0;
  double err_sum = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (sampled[p].size() != results[p].size()) throw DimensionError("score: one result per sampled keypoint");
    for (std::size_t k = 0; k < sampled[p].size(); ++k) {
      const std::size_t i = sampled[p][k];
      const TrackResult& r = results[p][k];
      const bool occ = pairs[p].occluded[i];
      ++m.sampled;
      occ_true += occ;
      occ_pred += r.verdict == Verdict::Occluded;
      occ_hit += occ && r.verdict == Verdict::Occluded;
      if (r.verdict == Verdict::Patch) ++m.emitted;
      if (is_correct(r, pairs[p].gt[i], occ)) ++m.correct;
      if (occ) continue;
      ++m.visible;
      coarse_right += static_cast<int>(r.column) == pairs[p].gt_patch[i];
      if (r.verdict == Verdict::Patch && r.position) {
        err_sum += (*r.position - pairs[p].gt[i]).norm();
        ++m.localized;
      }
    }
  }
  auto ratio = [](double a, std::size_t b) { return b ? a / static_cast<double>(b) : 0.0; };
  m.accuracy = ratio(static_cast<double>(m.correct), m.emitted);
  m.correct_mean = ratio(static_cast<double>(m.correct), m.pairs);
  m.occ_precision = ratio(static_cast<double>(occ_hit), occ_pred);
  m.occ_recall = ratio(static_cast<double>(occ_hit), occ_true);
  m.coarse_accuracy = ratio(static_cast<double>(coarse_right), m.visible);
  m.mean_error = ratio(err_sum, m.localized);
  return m;
}

EvalRun evaluate(const TrackerModel& model, const std::vector<ScenePair>& pairs, const EvalConfig& cfg) {
  EvalRun run;
  TrackOptions opts;
  opts.threshold = cfg.threshold;
  opts.use_fine = cfg.use_fine;
  for (const auto& pair : pairs) {
    auto idx = sample_keypoints(pair, cfg.max_keypoints);
    std::vector<Vec2> kps;
    for (auto i : idx) kps.push_back(pair.keypoints[i]);
    run.results.push_back(model.track(pair.img1, pair.img2, kps, opts));
    run.sampled.push_back(std::move(idx));
  }
  run.metrics = score(pairs, run.sampled, run.results, cfg.tag);
  return run;
}

Comparison compare_coarse_vs_fine(const TrackerModel& model, const std::vector<ScenePair>& pairs,
                                  const EvalConfig& cfg) {
  EvalConfig c = cfg;
  c.use_fine = false;
  c.tag = cfg.tag + ":coarse";
  Comparison out;
  out.coarse = evaluate(model, pairs, c).metrics;
  c.use_fine = true;
  c.tag = cfg.tag + ":fine";
  out.fine = evaluate(model, pairs, c).metrics;
  return out;
}

std::string metrics_table(const std::vector<EvalMetrics>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %6s %8s %8s %9s %10s %8s %8s %8s %8s\n", "tag", "pairs", "sampled",
                "accuracy", "correct", "coarse_acc", "occ_P", "occ_R", "err_px", "emitted");
  out << buf;
  for (const auto& m : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %6zu %8zu %8.4f %9.2f %10.4f %8.4f %8.4f %8.3f %8zu\n", m.tag.c_str(),
                  m.pairs, m.sampled, m.accuracy, m.correct_mean, m.coarse_accuracy, m.occ_precision, m.occ_recall,
                  m.mean_error, m.emitted);
    out << buf;
  }
  return out.str();
}

std::string metrics_csv(const std::vector<EvalMetrics>& rows) {
  std::ostringstream out;
  out.precision(9);
  out << "tag,pairs,sampled,visible,emitted,correct,accuracy,correct_mean,occ_precision,occ_recall,"
         "coarse_accuracy,mean_error\n";
  for (const auto& m : rows) {
    out << m.tag << ',' << m.pairs << ',' << m.sampled << ',' << m.visible << ',' << m.emitted << ',' << m.correct
        << ',' << m.accuracy << ',' << m.correct_mean << ',' << m.occ_precision << ',' << m.occ_recall << ','
        << m.coarse_accuracy << ',' << m.mean_error << '\n';
  }
  return out.str();
}

std::string matches_csv(std::span<const Vec2> keypoints, const std::vector<TrackResult>& results) {
  if (keypoints.size() != results.size()) throw DimensionError("matches_csv: one result per keypoint");
  std::ostringstream out;
  out.precision(9);
  out << "kp_index,x1,y1,verdict,x2,y2,confidence\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out << i << ',' << keypoints[i].x << ',' << keypoints[i].y << ',' << verdict_name(r.verdict) << ',';
    if (r.verdict == Verdict::Patch && r.position) out << r.position->x << ',' << r.position->y;
    else out << ',';
    out << ',' << r.confidence << '\n';
  }
  return out.str();
}

}  // namespace kpt
