#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "kpt/coarse.hpp"
#include "kpt/errors.hpp"
#include "kpt/fine.hpp"
#include "kpt/ops.hpp"

using namespace kpt;
using kpt::testing::random_tensor;

namespace {

SimilarityMatrix matrix(const Shape& shape, std::vector<Real> values) { return {Tensor::from(shape, std::move(values))}; }

void zero_all(Tensor t) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), Real(0)); }

void zero_mlp(const MlpParams& m) {
  for (const auto& w : m.weights) zero_all(w);
  for (const auto& b : m.biases) zero_all(b);
}

struct FineFixture {
  ParamStore store;
  FineParams params;
  explicit FineFixture(std::uint64_t seed, std::size_t dim = 8) {
    Rng rng(seed);
    params = make_fine(store, "fine", dim, FineConfig{1, 8}, rng);
  }
};

FineContext random_context(std::mt19937_64& rng, std::size_t dim, std::size_t rows, std::size_t cols,
                           std::size_t patch, double spread = 1.0) {
  DenseFeatureGrid g;
  g.rows = rows;
  g.cols = cols;
  g.dim = dim;
  g.features = random_tensor({rows * cols, dim}, rng, -spread, spread);
  return make_context(g, patch, random_tensor({1, dim}, rng, -spread, spread),
                      random_tensor({1, dim}, rng, -spread, spread));
}

}  // namespace

TEST(Similarity, HandComputedScores) {
  EncodedSet f1 = EncodedSet::single(Tensor::from({1, 2}, {1, 0}));
  EncodedSet f2 = EncodedSet::single(Tensor::from({2, 2}, {1, 0, 0, 1}));
  const auto s = similarity(f1, f2);
  EXPECT_EQ(s.rows(), 1u);
  EXPECT_EQ(s.cols(), 2u);
  EXPECT_NEAR(s.scores.at(0, 0), 1 / std::sqrt(2.0), 1e-7);
  EXPECT_EQ(s.scores.at(0, 1), 0);
}

TEST(Similarity, OrthonormalRowsDominateDiagonal) {
  std::vector<Real> eye(16, 0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
  const Tensor f = Tensor::from({4, 4}, eye);
  const auto s = similarity(EncodedSet::single(f), append_ocl(EncodedSet::single(f), Tensor::zeros({4})));
  const auto m = classify(s, 2, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m[i].column, i);
}

TEST(Similarity, BilinearInFirstArgument) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({3, 5}, rng), b = random_tensor({7, 5}, rng);
  const auto s1 = similarity(EncodedSet::single(a), EncodedSet::single(b));
  const auto s2 = similarity(EncodedSet::single(scale(a, 2)), EncodedSet::single(b));
  for (std::size_t i = 0; i < s1.scores.numel(); ++i) EXPECT_NEAR(s2.scores.data()[i], 2 * s1.scores.data()[i], 1e-5);
}

TEST(Similarity, WidthMismatchThrows) {
  EXPECT_THROW(similarity(EncodedSet::single(Tensor::zeros({1, 3})), EncodedSet::single(Tensor::zeros({2, 4}))),
               DimensionError);
}

TEST(Similarity, RandomizedShapeIncludesOclColumn) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 9, h = 8 * (1 + rng() % 6), w = 8 * (1 + rng() % 6), d = 4;
    const std::size_t p = h * w / 64;
    const auto f2 = append_ocl(EncodedSet::single(random_tensor({p, d}, rng)), random_tensor({d}, rng));
    const auto s = similarity(EncodedSet::single(random_tensor({m, d}, rng)), f2);
    EXPECT_EQ(s.rows(), m);
    EXPECT_EQ(s.cols(), p + 1);
    EXPECT_EQ(s.ocl_column(), p);
  }
}

TEST(Classify, OclColumnMeansOccluded) {
  const auto m = classify(matrix({1, 5}, {0, 0.01f, 0, 0, 10}), 2);
  EXPECT_EQ(m[0].verdict, Verdict::Occluded);
  EXPECT_EQ(m[0].column, 4u);
  EXPECT_FALSE(m[0].center.has_value());
}

TEST(Classify, UniformRowIsRejected) {
  const auto m = classify(matrix({1, 65}, std::vector<Real>(65, 0.3f)), 8, 0.1);
  EXPECT_EQ(m[0].verdict, Verdict::Rejected);
  EXPECT_NEAR(m[0].confidence, 1.0 / 65, 1e-9);
}

TEST(Classify, ZeroThresholdNeverRejects) {
  std::mt19937_64 rng(3);
  const auto m = classify({random_tensor({50, 65}, rng)}, 8, 0.0);
  for (const auto& c : m) EXPECT_NE(c.verdict, Verdict::Rejected);
}

TEST(Classify, ThresholdOutsideRangeThrows) {
  const auto s = matrix({1, 2}, {0, 0});
  EXPECT_THROW(classify(s, 1, 1.0), InputError);
  EXPECT_THROW(classify(s, 1, -0.1), InputError);
}

TEST(Classify, InvariantToRowShift) {
  std::mt19937_64 rng(4);
  const Tensor s = random_tensor({30, 17}, rng, -3, 3);
  std::vector<Real> shifted(s.data().begin(), s.data().end());
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 17; ++j) shifted[i * 17 + j] += static_cast<Real>(i) * 0.37f - 2;
  const auto a = classify({s}, 4, 0.1);
  const auto b = classify(matrix({30, 17}, shifted), 4, 0.1);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(a[i].column, b[i].column);
    EXPECT_EQ(a[i].verdict, b[i].verdict);
    EXPECT_NEAR(a[i].confidence, b[i].confidence, 1e-6);
  }
}

TEST(Classify, PatchCentersFollowGridFormula) {
  std::mt19937_64 rng(5);
  const std::size_t cols = 6, patches = 30;
  const auto m = classify({random_tensor({40, patches + 1}, rng, -4, 4)}, cols, 0.0);
  for (const auto& c : m) {
    if (c.verdict != Verdict::Patch) continue;
    ASSERT_TRUE(c.center.has_value());
    EXPECT_EQ(*c.center, patch_center(c.column / cols, c.column % cols));
    EXPECT_EQ(patch_index_of(*c.center, cols), c.column);
  }
}

TEST(Classify, ConfidenceIsSoftmaxAtArgmax) {
  std::mt19937_64 rng(6);
  const Tensor s = random_tensor({25, 65}, rng, -5, 5);
  const Tensor p = softmax_rows(s);
  const auto m = classify({s}, 8, 0.0);
  for (std::size_t i = 0; i < 25; ++i) {
    double total = 0, best = 0;
    for (std::size_t j = 0; j < 65; ++j) {
      total += p.at(i, j);
      best = std::max(best, static_cast<double>(p.at(i, j)));
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
    EXPECT_NEAR(m[i].confidence, best, 1e-6);
    EXPECT_GE(m[i].confidence, 0.0);
    EXPECT_LE(m[i].confidence, 1.0);
  }
}

TEST(Imbalance, Examples) {
  EXPECT_NEAR(imbalance_ratio(512, 256, 256, 0.2), 0.4, 1e-12);
  EXPECT_EQ(imbalance_ratio(512, 256, 256, 1.0), 0.0);
  EXPECT_EQ(imbalance_ratio(0, 64, 64, 0.3), 0.0);
  EXPECT_THROW(imbalance_ratio(5, 0, 64, 0.1), InputError);
}

TEST(GatherNeighbors, InteriorWindow) {
  const auto w = gather_neighbors(8, 8, 3 * 8 + 4);
  std::size_t k = 0;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc, ++k) {
      EXPECT_TRUE(w.valid[k]);
      EXPECT_EQ(w.offsets[k], (Vec2{8.0 * dc, 8.0 * dr}));
      EXPECT_EQ(w.cells[k], static_cast<std::size_t>((3 + dr) * 8 + 4 + dc));
    }
}

TEST(GatherNeighbors, CornerMasksFive) {
  const auto w = gather_neighbors(8, 8, 0);
  EXPECT_EQ(std::count(w.valid.begin(), w.valid.end(), true), 4);
  EXPECT_TRUE(w.valid[4]);
  EXPECT_EQ(w.offsets[4], (Vec2{0, 0}));
  for (std::size_t k = 0; k < kWindow; ++k) {
    if (!w.valid[k]) {
      EXPECT_LT(w.cells[k], 9u);
    }
  }
  EXPECT_EQ(w.cells[0], 0u);
  EXPECT_EQ(w.cells[8], 9u);
}

TEST(GatherNeighbors, ContentsMatchDirectGridReads) {
  std::mt19937_64 rng(7);
  DenseFeatureGrid g;
  g.rows = 5;
  g.cols = 7;
  g.dim = 3;
  g.features = random_tensor({35, 3}, rng);
  for (std::size_t patch = 0; patch < 35; ++patch) {
    const auto ctx = make_context(g, patch, Tensor::zeros({1, 3}), Tensor::zeros({1, 3}));
    const long r0 = static_cast<long>(patch / 7), c0 = static_cast<long>(patch % 7);
    for (std::size_t k = 0; k < kWindow; ++k) {
      const long r = std::clamp(r0 + static_cast<long>(k / 3) - 1, 0L, 4L);
      const long c = std::clamp(c0 + static_cast<long>(k % 3) - 1, 0L, 6L);
      for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(ctx.neighbors.at(k, a), g.features.at(r * 7 + c, a));
    }
  }
}

TEST(GatherNeighbors, InvalidIndexThrows) {
  EXPECT_THROW(gather_neighbors(8, 8, 64), InputError);
  EXPECT_THROW(gather_neighbors(0, 8, 0), InputError);
}

TEST(Refine, OffsetsStayStrictlyInsideRange) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    FineFixture f(static_cast<std::uint64_t>(trial), 4);
    // Inflate the head so tanh saturates on some trials.
    const Real gain = static_cast<Real>(1 + trial % 50);
    for (auto& w : f.params.head.weights)
      for (auto& v : w.mutable_data()) v *= gain;
    const auto ctx = random_context(rng, 4, 4, 4, rng() % 16, 3.0);
    const Vec2 d = refine(ctx, f.params);
    EXPECT_LT(std::abs(d.x), 4.0);
    EXPECT_LT(std::abs(d.y), 4.0);
  }
}

TEST(Refine, SymmetricScoresAndZeroHeadGiveZero) {
  FineFixture f(2);
  zero_mlp(f.params.posenc);
  zero_mlp(f.params.head);
  DenseFeatureGrid g;
  g.rows = g.cols = 4;
  g.dim = 8;
  g.features = Tensor::full({16, 8}, 0.25f);
  const auto ctx = make_context(g, 5, Tensor::full({1, 8}, 0.5f), Tensor::full({1, 8}, -0.1f));
  const auto out = refine_batch(batch_of(ctx), f.params);
  for (std::size_t k = 0; k < kWindow; ++k) EXPECT_NEAR(out.weights.at(0, k), 1.0 / 9, 1e-6);
  const Vec2 d = refine(ctx, f.params);
  EXPECT_EQ(d.x, 0);
  EXPECT_EQ(d.y, 0);
}

TEST(Refine, MaskedNeighborsGetZeroWeight) {
  FineFixture f(3);
  std::mt19937_64 rng(3);
  const auto ctx = random_context(rng, 8, 4, 4, 0);
  const auto out = refine_batch(batch_of(ctx), f.params);
  double total = 0;
  for (std::size_t k = 0; k < kWindow; ++k) {
    if (!ctx.valid[k]) {
      EXPECT_EQ(out.weights.at(0, k), 0);
    }
    total += out.weights.at(0, k);
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Refine, EquivariantToNeighborRelabeling) {
  FineFixture f(4);
  std::mt19937_64 rng(4);
  for (std::size_t patch : {0u, 5u, 15u}) {
    const auto ctx = random_context(rng, 8, 4, 4, patch);
    std::vector<std::size_t> perm(kWindow);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FineBatch b = batch_of(ctx);
    FineBatch p = b;
    p.neighbors = gather_rows(b.neighbors, perm);
    for (std::size_t k = 0; k < kWindow; ++k) {
      p.offsets[k] = b.offsets[perm[k]];
      p.valid[k] = b.valid[perm[k]];
    }
    NoGradGuard guard;
    const auto a = refine_batch(b, f.params), c = refine_batch(p, f.params);
    EXPECT_NEAR(a.offsets.at(0, 0), c.offsets.at(0, 0), 1e-5);
    EXPECT_NEAR(a.offsets.at(0, 1), c.offsets.at(0, 1), 1e-5);
    for (std::size_t k = 0; k < kWindow; ++k) EXPECT_NEAR(c.weights.at(0, k), a.weights.at(0, perm[k]), 1e-5);
  }
}

TEST(Refine, BatchedMatchesSingle) {
  FineFixture f(5);
  std::mt19937_64 rng(5);
  const auto c1 = random_context(rng, 8, 4, 4, 2), c2 = random_context(rng, 8, 4, 4, 9);
  const FineBatch b1 = batch_of(c1), b2 = batch_of(c2);
  FineBatch both;
  both.original = concat_rows({b1.original, b2.original});
  both.attended = concat_rows({b1.attended, b2.attended});
  both.neighbors = concat_rows({b1.neighbors, b2.neighbors});
  both.offsets = b1.offsets;
  both.offsets.insert(both.offsets.end(), b2.offsets.begin(), b2.offsets.end());
  both.valid = b1.valid;
  both.valid.insert(both.valid.end(), b2.valid.begin(), b2.valid.end());
  NoGradGuard guard;
  const auto out = refine_batch(both, f.params);
  const Vec2 d1 = refine(c1, f.params), d2 = refine(c2, f.params);
  EXPECT_NEAR(out.offsets.at(0, 0), d1.x, 1e-5);
  EXPECT_NEAR(out.offsets.at(0, 1), d1.y, 1e-5);
  EXPECT_NEAR(out.offsets.at(1, 0), d2.x, 1e-5);
  EXPECT_NEAR(out.offsets.at(1, 1), d2.y, 1e-5);
}

TEST(Refine, BrokenCenterInvariantThrows) {
  std::mt19937_64 rng(6);
  auto ctx = random_context(rng, 8, 4, 4, 5);
  ctx.valid[4] = false;
  EXPECT_THROW(batch_of(ctx), ContractError);
}

TEST(Compose, AddsOffsetToCenter) {
  EXPECT_EQ(compose({12, 4}, {0, 0}), (Vec2{12, 4}));
  EXPECT_EQ(compose({12, 4}, {3.5, -2}), (Vec2{15.5, 2}));
}

TEST(Compose, StaysNearPatchCenter) {
  FineFixture f(6);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t patch = rng() % 16;
    const Vec2 c = patch_center_of(patch, 4);
    const Vec2 p = compose(c, refine(random_context(rng, 8, 4, 4, patch, 2.0), f.params));
    EXPECT_LT((p - c).norm(), 4 * std::sqrt(2.0));
  }
}
