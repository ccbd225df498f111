#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "gradcheck.hpp"
#include "kpt/checkpoint.hpp"
#include "kpt/errors.hpp"
#include "kpt/nn.hpp"
#include "kpt/ops.hpp"
#include "kpt/optim.hpp"

using namespace kpt;

namespace {

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from({2, 3}, std::vector<Real>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at(1, 2), 6);
}

TEST(Tensor, ResultsAreImmutable) {
  Tensor a = Tensor::full({2, 2}, 1);
  a.set_requires_grad(true);
  Tensor b = add(a, a);
  EXPECT_THROW(b.mutable_data(), ContractError);
  EXPECT_NO_THROW(a.mutable_data());
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor b = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(values(matmul(eye, b)), values(b));
}

TEST(Matmul, HandExample) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 1}, {0, 1});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(values(c), (std::vector<Real>{2, 4}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2 x 3]"), std::string::npos) << e.what();
  }
}

TEST(Softmax, EqualValuesGiveUniformRow) {
  const Tensor s = softmax_rows(Tensor::full({1, 4}, 3));
  for (Real v : s.data()) EXPECT_NEAR(v, 0.25, 1e-7);
}

TEST(Softmax, ClosedForm) {
  const Tensor s = softmax_rows(Tensor::from({1, 2}, {0, static_cast<Real>(std::log(3.0))}));
  EXPECT_NEAR(s.data()[0], 0.25, 1e-6);
  EXPECT_NEAR(s.data()[1], 0.75, 1e-6);
}

TEST(Softmax, ShiftInvariant) {
  const Tensor a = Tensor::from({1, 3}, {0.1f, -2, 4});
  const Tensor b = Tensor::from({1, 3}, {100.1f, 98, 104});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(softmax_rows(a).data()[i], softmax_rows(b).data()[i], 1e-6);
}

TEST(Softmax, RowsSumToOneEvenWithLargeSpread) {
  std::mt19937_64 rng(1);
  const Tensor x = kpt::testing::random_tensor({20, 9}, rng, -1000, 1000);
  const Tensor s = softmax_rows(x);
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 9; ++c) total += s.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(MaskedSoftmax, MaskedEntriesGetExactlyZero) {
  const Tensor x = Tensor::from({1, 4}, {5, 1, 2, 3});
  const std::vector<std::uint8_t> mask{0, 1, 1, 0};
  const Tensor s = masked_softmax_rows(x, mask);
  EXPECT_EQ(s.data()[0], 0);
  EXPECT_EQ(s.data()[3], 0);
  EXPECT_NEAR(s.data()[1] + s.data()[2], 1.0, 1e-6);
  const std::vector<std::uint8_t> none{0, 0, 0, 0};
  EXPECT_THROW(masked_softmax_rows(x, none), ContractError);
}

TEST(EluPlusOne, Branches) {
  const Tensor y = elu_plus_one(Tensor::from({3}, {0, 3, -1}));
  EXPECT_EQ(y.data()[0], 1);
  EXPECT_EQ(y.data()[1], 4);
  EXPECT_NEAR(y.data()[2], 0.3679, 1e-4);
}

TEST(EluPlusOne, StrictlyPositive) {
  std::mt19937_64 rng(2);
  const Tensor y = elu_plus_one(kpt::testing::random_tensor({50, 10}, rng, -30, 30));
  for (Real v : y.data()) EXPECT_GT(v, 0);
}

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
  const std::vector<int> y{7, 64};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({2, 65}), y).item(), std::log(65.0), 1e-5);
}

TEST(CrossEntropy, IgnoredRowsDoNotCount) {
  const Tensor logits = Tensor::from({2, 2}, {0, 0, 50, -50});
  const std::vector<int> y{0, -1};
  EXPECT_NEAR(cross_entropy(logits, y).item(), std::log(2.0), 1e-6);
}

TEST(Mlp, ZeroWeightsGiveBiasRows) {
  ParamStore store;
  Rng rng(1);
  MlpParams p = make_mlp(store, "m", {3, 4, 2}, rng);
  for (auto& w : p.weights) std::fill(w.mutable_data().begin(), w.mutable_data().end(), Real(0));
  std::fill(p.biases[0].mutable_data().begin(), p.biases[0].mutable_data().end(), Real(0));
  p.biases[1].mutable_data()[0] = 0.5;
  p.biases[1].mutable_data()[1] = -2;
  const Tensor y = mlp_forward(Tensor::full({3, 3}, 7), p);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y.at(r, 0), Real(0.5));
    EXPECT_EQ(y.at(r, 1), Real(-2));
  }
}

TEST(Mlp, SingleIdentityLayerIsIdentity) {
  ParamStore store;
  Rng rng(1);
  MlpParams p = make_mlp(store, "m", {3, 3}, rng);
  auto w = p.weights[0].mutable_data();
  for (std::size_t i = 0; i < 9; ++i) w[i] = (i % 4 == 0) ? 1 : 0;
  std::fill(p.biases[0].mutable_data().begin(), p.biases[0].mutable_data().end(), Real(0));
  const Tensor x = Tensor::from({2, 3}, {1, -2, 3, 0.5f, 0, -7});
  EXPECT_EQ(values(mlp_forward(x, p)), values(x));
}

TEST(Mlp, WidthMismatch) {
  ParamStore store;
  Rng rng(1);
  const MlpParams p = make_mlp(store, "m", {3, 3}, rng);
  EXPECT_THROW(mlp_forward(Tensor::zeros({2, 4}), p), DimensionError);
}

TEST(Init, UniformWithinFanInBound) {
  ParamStore store;
  Rng rng(4);
  const Tensor w = store.create_uniform("w", {16, 16}, 16, rng);
  for (Real v : w.data()) EXPECT_LE(std::abs(v), 0.25f);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor a = Tensor::full({2}, 1);
  a.set_requires_grad(true);
  EXPECT_THROW(scale(a, 2).backward(), ContractError);
}

TEST(Backward, DiamondSumsBothPaths) {
  Tensor x = Tensor::from({1}, {3});
  x.set_requires_grad(true);
  const Tensor y = scale(x, 2);
  sum(add(mul(y, y), y)).backward();  // d/dx (4x^2 + 2x) = 8x + 2
  EXPECT_NEAR(x.grad()[0], 26, 1e-5);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  const Tensor loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  EXPECT_NEAR(x.grad()[0], 4, 1e-6);
  EXPECT_NEAR(x.grad()[1], 8, 1e-6);
}

TEST(Backward, EveryReachableLeafGetsGrad) {
  Tensor a = Tensor::full({2, 2}, 1), b = Tensor::full({2, 2}, 2), c = Tensor::full({2, 2}, 3);
  for (Tensor* t : {&a, &b, &c}) t->set_requires_grad(true);
  const Tensor loss = sum(add(matmul(a, b), c));
  const auto tape = computation_tape(loss);
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (const auto& in : tape[i]->inputs) {
      if (!in->requires_grad) continue;
      const auto it = std::find(tape.begin(), tape.end(), in.get());
      ASSERT_NE(it, tape.end());
      EXPECT_LT(static_cast<std::size_t>(it - tape.begin()), i);
    }
  loss.backward();
  EXPECT_TRUE(a.has_grad() && b.has_grad() && c.has_grad());
}

TEST(NoGrad, RecordsNothing) {
  Tensor a = Tensor::full({2}, 1);
  a.set_requires_grad(true);
  NoGradGuard guard;
  EXPECT_FALSE(scale(a, 2).requires_grad());
}

TEST(Optimizer, MissingGradNamesParameter) {
  Tensor w = Tensor::full({2}, 1);
  w.set_requires_grad(true);
  Optimizer opt({{"layer.w", w}});
  try {
    opt.step();
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.w"), std::string::npos);
  }
}

TEST(Optimizer, SgdStep) {
  Tensor w = Tensor::from({2}, {1, 2});
  w.set_requires_grad(true);
  Optimizer opt({{"w", w}}, {OptimizerKind::Sgd, 0.5f});
  sum(mul(w, w)).backward();
  opt.step();
  EXPECT_NEAR(w.data()[0], 0, 1e-6);
  EXPECT_NEAR(w.data()[1], 0, 1e-6);
  EXPECT_TRUE(opt.state().first_moment.empty());
  EXPECT_NEAR(w.grad()[1], 4, 1e-6);  // grads left untouched
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  Tensor w = Tensor::from({2}, {1, -3});
  w.set_requires_grad(true);
  Optimizer opt({{"w", w}});
  sum(mul(w, w)).backward();
  opt.step();
  EXPECT_NEAR(w.data()[0], 1 - 1e-3, 1e-6);
  EXPECT_NEAR(w.data()[1], -3 + 1e-3, 1e-6);
  EXPECT_EQ(opt.state().step, 1u);
  ASSERT_EQ(opt.state().first_moment.size(), 1u);
  opt.zero_grads();
  EXPECT_EQ(w.grad()[0], 0);
}

TEST(Optimizer, SetLrAppliesToNextStep) {
  Tensor w = Tensor::from({1}, {1});
  w.set_requires_grad(true);
  Optimizer opt({{"w", w}}, {OptimizerKind::Sgd, 0.5f});
  opt.set_lr(0.25f);
  sum(mul(w, w)).backward();
  opt.step();
  EXPECT_NEAR(w.data()[0], 0.5, 1e-6);
  EXPECT_THROW(opt.set_lr(0), ContractError);
}

TEST(Checkpoint, BitExactRoundTrip) {
  ParamStore store;
  Rng rng(9);
  store.create_uniform("a.w", {3, 5}, 5, rng);
  store.create_uniform("b", {7}, 7, rng);
  const auto entries = snapshot(store);
  const auto bytes = encode_checkpoint(entries);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TRKF");
  EXPECT_EQ(bytes[4], 1);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a.w");
  EXPECT_EQ(back[0].dims, (std::vector<std::uint32_t>{3, 5}));
  EXPECT_EQ(std::memcmp(back[0].values.data(), entries[0].values.data(), 15 * sizeof(float)), 0);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, LittleEndianLayout) {
  const auto bytes = encode_checkpoint({{"x", {1}, {1.0f}}});
  // magic, version, u32 len=1, 'x', u32 rank=1, u32 dim=1, f32 1.0
  const std::vector<std::uint8_t> expect{'T', 'R', 'K', 'F', 1, 1, 0, 0, 0, 'x', 1, 0, 0, 0,
                                         1,   0,   0,   0,   0, 0, 0x80, 0x3f};
  EXPECT_EQ(bytes, expect);
}

TEST(Checkpoint, RejectsCorruptInput) {
  EXPECT_THROW(decode_checkpoint({'N', 'O', 'P', 'E', 1}), IoError);
  auto bytes = encode_checkpoint({{"x", {2}, {1.0f, 2.0f}}});
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes), IoError);
}

TEST(Checkpoint, RestoreChecksShapes) {
  ParamStore store;
  Rng rng(9);
  store.create_uniform("w", {2, 2}, 2, rng);
  EXPECT_THROW(restore(store, {{"w", {4}, {1, 2, 3, 4}}}), InputError);
  EXPECT_THROW(restore(store, {}), InputError);
}
