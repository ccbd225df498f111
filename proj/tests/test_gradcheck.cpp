// Finite-difference checks, built against the 64-bit library.
#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "kpt/linear_attention.hpp"
#include "kpt/model.hpp"
#include "kpt/trainer.hpp"

using namespace kpt;
using kpt::testing::grad_rel_error;
using kpt::testing::probe;
using kpt::testing::random_tensor;

static_assert(sizeof(Real) == 8, "gradient checks run in double precision");

namespace {

constexpr double kOpTol = 1e-3;
constexpr double kPipelineTol = 1e-2;
// Small enough that the perturbation rarely straddles a ReLU kink.
constexpr double kPipelineStep = 1e-5;

struct OpGrad : ::testing::Test {
  std::mt19937_64 rng{42};
  Tensor r(const Shape& s) { return random_tensor(s, rng); }
};

}  // namespace

TEST_F(OpGrad, Matmul) {
  Tensor a = r({3, 4}), b = r({4, 5});
  EXPECT_LT(grad_rel_error([&] { return probe(matmul(a, b)); }, {a, b}), kOpTol);
}

TEST_F(OpGrad, MatmulSumMatchesSpecExample) {
  Tensor a = r({2, 3}), b = r({3, 2});
  EXPECT_LT(grad_rel_error([&] { return sum(matmul(a, b)); }, {a}), kOpTol);
}

TEST_F(OpGrad, MatmulNtAndTranspose) {
  Tensor a = r({3, 4}), b = r({5, 4});
  EXPECT_LT(grad_rel_error([&] { return probe(matmul_nt(a, b)); }, {a, b}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(transpose(a)); }, {a}), kOpTol);
}

TEST_F(OpGrad, Elementwise) {
  Tensor a = r({3, 4}), b = r({3, 4}), bias = r({4});
  EXPECT_LT(grad_rel_error([&] { return probe(add(a, b)); }, {a, b}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(sub(a, b)); }, {a, b}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(mul(a, b)); }, {a, b}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(scale(a, 2.5)); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(add_bias(a, bias)); }, {a, bias}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(relu(a)); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(elu_plus_one(a)); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(kpt::tanh(a)); }, {a}), kOpTol);
}

TEST_F(OpGrad, Reductions) {
  Tensor a = r({3, 4});
  EXPECT_LT(grad_rel_error([&] { return sum(mul(a, a)); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return mean(mul(a, a)); }, {a}), kOpTol);
}

TEST_F(OpGrad, Softmaxes) {
  Tensor a = r({3, 5});
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 0, 0, 1, 0, 0, 1, 1, 1, 1, 1};
  EXPECT_LT(grad_rel_error([&] { return probe(softmax_rows(a)); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(log_softmax_rows(a)); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(masked_softmax_rows(a, mask)); }, {a}), kOpTol);
}

TEST_F(OpGrad, LayerNormAndCrossEntropy) {
  Tensor x = r({4, 6}), g = r({6}), b = r({6});
  EXPECT_LT(grad_rel_error([&] { return probe(layer_norm_rows(x, g, b)); }, {x, g, b}), kOpTol);
  const std::vector<int> y{2, -1, 5, 0};
  EXPECT_LT(grad_rel_error([&] { return cross_entropy(x, y); }, {x}), kOpTol);
}

TEST_F(OpGrad, Structure) {
  Tensor a = r({3, 4}), b = r({2, 4}), c = r({3, 2});
  EXPECT_LT(grad_rel_error([&] { return probe(reshape(a, {2, 6})); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(concat_rows({a, b, a})); }, {a, b}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(concat_cols(a, c)); }, {a, c}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(slice_rows(a, 1, 3)); }, {a}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(slice_cols(a, 1, 3)); }, {a}), kOpTol);
}

TEST_F(OpGrad, Gathers) {
  Tensor t = r({5, 3});
  const std::vector<std::size_t> idx{0, 4, 4, 2, 1, 3};
  const std::vector<Real> w{0.25, 0.75, 1.0, -0.5, 0.3, 0.2};
  EXPECT_LT(grad_rel_error([&] { return probe(weighted_gather(t, idx, w, 2)); }, {t}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(gather_rows(t, idx)); }, {t}), kOpTol);
}

TEST_F(OpGrad, Segmented) {
  Tensor q = r({2, 4}), keys = r({6, 4}), w = r({2, 3}), vals = r({6, 2});
  EXPECT_LT(grad_rel_error([&] { return probe(segment_dot(q, keys, 3)); }, {q, keys}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(segment_weighted_sum(w, vals)); }, {w, vals}), kOpTol);
}

TEST_F(OpGrad, Convolution) {
  Tensor x = r({2, 2, 6, 6}), w = r({3, 2, 3, 3}), b = r({3});
  EXPECT_LT(grad_rel_error([&] { return probe(conv2d(x, w, b, 1, 1)); }, {x, w, b}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(conv2d(x, w, b, 2, 1)); }, {x, w, b}), kOpTol);
  EXPECT_LT(grad_rel_error([&] { return probe(nchw_to_rows(x)); }, {x}), kOpTol);
}

TEST_F(OpGrad, LinearAttention) {
  Tensor q = r({5, 4}), k = r({7, 4}), v = r({7, 3});
  EXPECT_LT(grad_rel_error([&] { return probe(linear_attention(q, k, v)); }, {q, k, v}), kOpTol);
  const std::vector<AttentionSegment> segs{{0, 2, 0, 3}, {2, 5, 3, 7}};
  const std::vector<Real> kw{1, 0, 1, 1, 1, 0, 1};
  EXPECT_LT(grad_rel_error([&] { return probe(linear_attention(q, k, v, segs, kw)); }, {q, k, v}), kOpTol);
}

TEST_F(OpGrad, MlpAndPositions) {
  ParamStore store;
  Rng prng(3);
  const MlpParams mlp = make_mlp(store, "m", {2, 5, 4}, prng);
  Tensor x = r({3, 2}), f = r({3, 4});
  std::vector<Tensor> inputs{x};
  for (const auto& e : store.entries()) inputs.push_back(e.second);
  EXPECT_LT(grad_rel_error([&] { return probe(mlp_forward(x, mlp)); }, inputs), kOpTol);
  const std::vector<Vec2> pos{{1, 2}, {30, 5}, {17, 60}};
  inputs[0] = f;
  EXPECT_LT(grad_rel_error([&] { return probe(encode_positions(f, pos, 64, 64, mlp)); }, inputs), kOpTol);
}

TEST_F(OpGrad, AttentionLayer) {
  ParamStore store;
  Rng prng(5);
  const auto layer = make_attention_layer(store, "l", 4, prng);
  Tensor t = r({3, 4}), s = r({6, 4});
  std::vector<Tensor> inputs{t, s};
  for (const auto& e : store.entries()) inputs.push_back(e.second);
  EXPECT_LT(grad_rel_error(
                [&] {
                  return probe(attention_layer(EncodedSet::single(t), EncodedSet::single(s), layer).features);
                },
                inputs),
            kOpTol);
}

TEST(PipelineGrad, AamTinyInstance) {
  std::mt19937_64 rng(11);
  ParamStore store;
  Rng prng(8);
  const AamParams aam = make_aam(store, "aam", 8, 1, prng);
  Tensor f1 = random_tensor({3, 8}, rng), f2 = random_tensor({9, 8}, rng), ocl = random_tensor({8}, rng);
  std::vector<Tensor> inputs{f1, f2, ocl};
  for (const auto& e : store.entries()) inputs.push_back(e.second);
  const double err = grad_rel_error(
      [&] {
        const EncodedSet s2 = append_ocl(EncodedSet::single(f2), ocl);  // N = 10 with the token
        const auto [a, b] = aam_forward(EncodedSet::single(f1), s2, aam);
        return add(probe(a.features, 1), probe(b.features, 2));
      },
      inputs, kPipelineStep);
  EXPECT_LT(err, kPipelineTol);
}

TEST(PipelineGrad, RefineToyContext) {
  std::mt19937_64 rng(12);
  ParamStore store;
  Rng prng(9);
  const FineParams fp = make_fine(store, "fine", 8, FineConfig{}, prng);
  FineContext ctx;
  ctx.original = random_tensor({1, 8}, rng);
  ctx.attended = random_tensor({1, 8}, rng);
  ctx.neighbors = random_tensor({9, 8}, rng);
  const auto win = gather_neighbors(4, 4, 0);
  ctx.offsets = win.offsets;
  ctx.valid = win.valid;
  std::vector<Tensor> inputs{ctx.original, ctx.attended, ctx.neighbors};
  for (const auto& e : store.entries()) inputs.push_back(e.second);
  const double err = grad_rel_error([&] { return probe(refine_batch(batch_of(ctx), fp).offsets); }, inputs, kPipelineStep);
  EXPECT_LT(err, kPipelineTol);
}

TEST(PipelineGrad, FullCoarsePipeline) {
  ModelConfig cfg;
  cfg.extractor.widths = {4, 6, 8};
  cfg.extractor.dim = 8;
  cfg.depth = 1;
  cfg.posenc_hidden = 8;
  cfg.seed = 4;
  TrackerModel model(cfg);
  Image a(32, 32), b(32, 32);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& p : a.pixels()) p = u(rng);
  for (auto& p : b.pixels()) p = u(rng);
  const std::vector<Vec2> kps{{5.5, 7.25}, {20.0, 12.5}, {27.75, 29.0}};
  const std::vector<int> y_occ{3, 9, 16};
  const std::vector<int> y_vis{3, 9, -1};
  const std::vector<Vec2> gt{{28, 4}, {10, 22}, {0, 0}};
  std::vector<Tensor> inputs;
  for (const auto& e : model.params().entries())
    if (!e.first.starts_with("fine.")) inputs.push_back(e.second);
  const PairInput pair{&a, &b, kps};
  const double err = grad_rel_error(
      [&] {
        const CoarseForward cf = model.coarse_forward(std::span<const PairInput>(&pair, 1));
        const auto l1 = coarse_stage_loss(StageId::SynthNoOcc, cf.sim, y_vis, gt, cf.grid_cols, 0.1).total;
        const auto l2 = coarse_stage_loss(StageId::SynthOcc, cf.sim, y_occ, gt, cf.grid_cols, 0.1).total;
        return add(l1, l2);
      },
      inputs, kPipelineStep);
  EXPECT_LT(err, kPipelineTol);
}
