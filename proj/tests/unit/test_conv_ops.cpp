#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rego/autograd.hpp"
#include "rego/errors.hpp"
#include "rego/nn.hpp"

using namespace rego;
using rego::testing::check_gradients;
using rego::testing::naive_conv2d;
using rego::testing::random_tensor;

struct ConvCase {
  int h, w, cin, cout, kh, kw, stride;
};

class ConvVsNaive : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvVsNaive, ForwardMatchesSixLoopOracle) {
  const ConvCase c = GetParam();
  std::mt19937_64 rng(c.h * 131 + c.w * 7 + c.cin + c.stride);
  const Tensor x = random_tensor({c.h, c.w, c.cin}, rng);
  const Tensor w = random_tensor({c.kh, c.kw, c.cin, c.cout}, rng);
  const Tensor b = random_tensor({c.cout}, rng);
  const Var y = ops::conv2d(constant(x), constant(w), constant(b), {c.stride, c.kh / 2, c.kw / 2});
  const Tensor ref = naive_conv2d(x, w, &b, c.stride, c.kh / 2, c.kw / 2);
  ASSERT_EQ(y.value().dims(), ref.dims());
  EXPECT_LT(max_abs_diff(y.value(), ref), 1e-12);
}

TEST_P(ConvVsNaive, GradientsMatchFiniteDifferences) {
  const ConvCase c = GetParam();
  std::mt19937_64 rng(c.h * 17 + c.cout);
  Var x = parameter(random_tensor({c.h, c.w, c.cin}, rng));
  Var w = parameter(random_tensor({c.kh, c.kw, c.cin, c.cout}, rng));
  Var b = parameter(random_tensor({c.cout}, rng));
  const Tensor probe = random_tensor(ops::conv2d(x, w, b, {c.stride, c.kh / 2, c.kw / 2}).value().dims(), rng);
  auto loss = [&] { return ops::dot(ops::conv2d(x, w, b, {c.stride, c.kh / 2, c.kw / 2}), constant(probe)); };
  const auto r = check_gradients(loss, {{"x", x}, {"w", w}, {"b", b}});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvVsNaive,
                         ::testing::Values(ConvCase{5, 7, 2, 3, 3, 3, 1}, ConvCase{6, 6, 3, 4, 3, 3, 2},
                                           ConvCase{7, 5, 1, 2, 3, 3, 2}, ConvCase{4, 9, 2, 2, 1, 3, 1},
                                           ConvCase{9, 4, 3, 1, 7, 1, 1}, ConvCase{3, 3, 4, 5, 1, 1, 1}));

TEST(Conv, NoBiasIsAllowed) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({4, 4, 2}, rng);
  const Tensor w = random_tensor({3, 3, 2, 2}, rng);
  const Var y = ops::conv2d(constant(x), constant(w), Var(), {1, 1, 1});
  EXPECT_LT(max_abs_diff(y.value(), naive_conv2d(x, w, nullptr, 1, 1, 1)), 1e-12);
}

TEST(Conv, ChannelMismatchThrows) {
  EXPECT_THROW(ops::conv2d(constant(Tensor({4, 4, 2})), constant(Tensor({3, 3, 3, 1})), Var(), {1, 1, 1}), ShapeError);
}

TEST(Upsample, NearestCopiesEachPixelToA2x2Block) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 3, 2}, rng);
  const Tensor y = ops::upsample_nearest2x(constant(x)).value();
  ASSERT_EQ(y.dims(), (Dims{4, 6, 2}));
  for (int yy = 0; yy < 4; ++yy)
    for (int xx = 0; xx < 6; ++xx)
      for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(y.at(yy, xx, c), x.at(yy / 2, xx / 2, c));
}

TEST(Upsample, GradientSumsOverBlocks) {
  std::mt19937_64 rng(5);
  Var x = parameter(random_tensor({2, 2, 1}, rng));
  const Tensor probe = random_tensor({4, 4, 1}, rng);
  auto loss = [&] { return ops::dot(ops::upsample_nearest2x(x), constant(probe)); };
  const auto r = check_gradients(loss, {{"x", x}});
  EXPECT_LT(r.max_rel_error, 1e-7) << r.worst;
}

TEST(AdaptivePool, MatchesHandComputedBins) {
  // 5 columns into 3 bins: [0,2) [1,4) [3,5)
  Tensor x({1, 5, 1}, std::vector<double>{1, 2, 3, 4, 5});
  const Tensor y = ops::adaptive_avg_pool(constant(x), 1, 3).value();
  EXPECT_DOUBLE_EQ(y[0], 1.5);
  EXPECT_DOUBLE_EQ(y[1], 3.0);
  EXPECT_DOUBLE_EQ(y[2], 4.5);
}

TEST(AdaptivePool, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  Var x = parameter(random_tensor({5, 7, 2}, rng));
  const Tensor probe = random_tensor({3, 3, 2}, rng);
  auto loss = [&] { return ops::dot(ops::adaptive_avg_pool(x, 3, 3), constant(probe)); };
  const auto r = check_gradients(loss, {{"x", x}});
  EXPECT_LT(r.max_rel_error, 1e-7) << r.worst;
  const Tensor g = ops::global_avg_pool(constant(Tensor({2, 2, 1}, std::vector<double>{1, 2, 3, 6}))).value();
  EXPECT_DOUBLE_EQ(g[0], 3.0);
}

namespace {

ops::BatchNormState make_bn(int c, std::mt19937_64& rng) {
  ops::BatchNormState s;
  s.gamma = parameter(random_tensor({c}, rng, 0.5, 1.5));
  s.beta = parameter(random_tensor({c}, rng));
  s.running_mean = constant(random_tensor({c}, rng));
  s.running_var = constant(random_tensor({c}, rng, 0.5, 2.0));
  return s;
}

}  // namespace

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
  std::mt19937_64 rng(7);
  ops::BatchNormState s = make_bn(3, rng);
  s.gamma.mutable_value().fill(1.0);
  s.beta.mutable_value().fill(0.0);
  const Tensor x = random_tensor({4, 5, 3}, rng, -3, 5);
  const Tensor y = ops::batch_norm(constant(x), s, ops::NormMode::Train).value();
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int i = 0; i < 20; ++i) m += y[static_cast<std::size_t>(i * 3 + c)];
    m /= 20;
    for (int i = 0; i < 20; ++i) v += std::pow(y[static_cast<std::size_t>(i * 3 + c)] - m, 2);
    v /= 20;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(BatchNorm, TrainModeUpdatesRunningStatistics) {
  std::mt19937_64 rng(8);
  ops::BatchNormState s = make_bn(1, rng);
  s.running_mean.mutable_value().fill(0.0);
  s.running_var.mutable_value().fill(1.0);
  Tensor x({1, 4, 1}, std::vector<double>{1, 2, 3, 6});
  ops::batch_norm(constant(x), s, ops::NormMode::Train);
  EXPECT_NEAR(s.running_mean.value()[0], 0.1 * 3.0, 1e-12);
  // unbiased variance of {1,2,3,6} = 14/3
  EXPECT_NEAR(s.running_var.value()[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
}

TEST(BatchNorm, FrozenModeIsAffineInRunningStats) {
  std::mt19937_64 rng(9);
  const ops::BatchNormState s = make_bn(2, rng);
  const Tensor x = random_tensor({2, 2, 2}, rng);
  const Tensor y = ops::batch_norm(constant(x), s, ops::NormMode::Frozen).value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % 2;
    const double expect = s.gamma.value()[c] * (x[i] - s.running_mean.value()[c]) /
                              std::sqrt(s.running_var.value()[c] + s.eps) +
                          s.beta.value()[c];
    EXPECT_NEAR(y[i], expect, 1e-12);
  }
}

TEST(BatchNorm, GradientsMatchFiniteDifferencesInBothModes) {
  for (auto mode : {ops::NormMode::Train, ops::NormMode::Frozen}) {
    std::mt19937_64 rng(10);
    ops::BatchNormState s = make_bn(3, rng);
    Var x = parameter(random_tensor({3, 4, 3}, rng));
    const Tensor probe = random_tensor({3, 4, 3}, rng);
    // Running statistics drift in train mode; freeze a copy per evaluation.
    const Tensor rm = s.running_mean.value(), rv = s.running_var.value();
    auto loss = [&] {
      s.running_mean.mutable_value() = rm;
      s.running_var.mutable_value() = rv;
      return ops::dot(ops::batch_norm(x, s, mode), constant(probe));
    };
    const auto r = check_gradients(loss, {{"x", x}, {"gamma", s.gamma}, {"beta", s.beta}});
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Var p = parameter(Tensor({2}, std::vector<double>{1.0, -1.0}));
  Adam opt({p}, {0.1, 0.5, 0.999, 1e-8});
  backward(ops::sum(ops::mul(p, constant(Tensor({2}, std::vector<double>{3.0, -0.5})))));
  opt.step();
  // bias-corrected first step is lr * sign(g)
  EXPECT_NEAR(p.value()[0], 0.9, 1e-6);
  EXPECT_NEAR(p.value()[1], -0.9, 1e-6);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(ParamStore, RegistrationAndLoadContracts) {
  ParamStore store;
  Rng rng(1);
  Conv2d conv(store, "block.conv", {3, 3, 2, 4}, rng);
  BatchNorm bn(store, "block.bn", 4);
  EXPECT_TRUE(store.contains("block.conv.weight"));
  EXPECT_TRUE(store.contains("block.conv.bias"));
  EXPECT_FALSE(store.is_trainable("block.bn.running_mean"));
  EXPECT_EQ(store.parameters({"block.conv"}).size(), 2u);
  EXPECT_EQ(store.parameter_count(), 3u * 3 * 2 * 4 + 4 + 4 + 4);
  EXPECT_THROW(store.add_parameter("block.conv.weight", Tensor({1})), ConfigError);

  auto snap = store.snapshot();
  snap.erase("block.bn.gamma");
  EXPECT_THROW(store.load(snap), NotFoundError);
  snap = store.snapshot();
  snap["block.conv.bias"] = Tensor({5});
  EXPECT_THROW(store.load(snap), ShapeError);
}
