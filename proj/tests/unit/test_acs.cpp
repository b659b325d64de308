#include <gtest/gtest.h>

#include <cmath>

#include "model_utils.hpp"
#include "oracles.hpp"
#include "rego/acs.hpp"
#include "rego/errors.hpp"

using namespace rego;
using namespace rego::testing;

namespace {

DynamicKernel raw(const Tensor& t) { return {constant(t), false}; }

}  // namespace

TEST(NormalizeKernel, ZeroKernelIsUniform) {
  const Tensor k = normalize_kernel(raw(Tensor({3, 3, 4}, 0.0))).weights.value();
  for (double v : k.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(NormalizeKernel, TwoChannelAnalyticCase) {
  Tensor t({3, 3, 2}, 0.0);
  t.at(1, 2, 1) = std::log(3.0);
  const DynamicKernel k = normalize_kernel(raw(t));
  EXPECT_TRUE(k.normalized);
  EXPECT_NEAR(k.weights.value().at(1, 2, 0), 0.25, 1e-15);
  EXPECT_NEAR(k.weights.value().at(1, 2, 1), 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(k.weights.value().at(0, 0, 0), 0.5);
}

TEST(NormalizeKernel, MatchesNaiveSoftmaxAndIsShiftInvariant) {
  std::mt19937_64 rng(1);
  for (int c : {1, 2, 4, 8, 16}) {
    const Tensor t = random_tensor({3, 3, c}, rng, -5, 5);
    const Tensor k = normalize_kernel(raw(t)).weights.value();
    EXPECT_LT(max_abs_diff(k, naive_channel_softmax(t)), 1e-14);
    Tensor shifted = t;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        const double c0 = std::uniform_real_distribution<double>(-50, 50)(rng);
        for (int ch = 0; ch < c; ++ch) shifted.at(y, x, ch) += c0;
      }
    EXPECT_LT(max_abs_diff(normalize_kernel(raw(shifted)).weights.value(), k), 1e-9);
  }
}

TEST(NormalizeKernel, HugeLogitsStayFinite) {
  Tensor t({3, 3, 3}, 0.0);
  t.at(0, 0, 0) = 1e4;
  t.at(0, 0, 1) = -1e4;
  const Tensor k = normalize_kernel(raw(t)).weights.value();
  EXPECT_TRUE(k.all_finite());
  EXPECT_DOUBLE_EQ(k.at(0, 0, 0), 1.0);
}

TEST(NormalizeKernel, RejectsNanAndWrongShape) {
  Tensor t({3, 3, 2}, 0.0);
  t[3] = std::nan("");
  EXPECT_THROW(normalize_kernel(raw(t)), InvalidValueError);
  EXPECT_THROW(normalize_kernel(raw(Tensor({2, 3, 2}))), ShapeError);
}

TEST(NormalizeKernel, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Var k = parameter(random_tensor({3, 3, 5}, rng, -2, 2));
  const Tensor probe = random_tensor({3, 3, 5}, rng);
  auto loss = [&] { return ops::dot(normalize_kernel({k, false}).weights, constant(probe)); };
  const auto r = check_gradients(loss, {{"k", k}}, 1e-5, 45);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Distill, MatchesNaiveLoopOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = dim(rng), w = dim(rng), c = dim(rng);
    const Tensor ref = random_tensor({h, w, c}, rng);
    const DynamicKernel k = normalize_kernel(raw(random_tensor({3, 3, c}, rng, -3, 3)));
    const Tensor got = distill_reference(constant(ref), k).value();
    EXPECT_LT(max_abs_diff(got, naive_distill(ref, k.weights.value())), 1e-12) << h << "x" << w << "x" << c;
  }
}

TEST(Distill, UniformKernelOnConstantFeaturesGivesNineV) {
  const int c = 4;
  const double v = 0.7;
  const DynamicKernel k = normalize_kernel(raw(Tensor({3, 3, c}, 0.0)));
  const Tensor out = distill_reference(constant(Tensor({5, 6, c}, v)), k).value();
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 5; ++x)
      for (int i = 0; i < c; ++i) EXPECT_NEAR(out.at(y, x, i), 9 * v, 1e-12);
  EXPECT_NEAR(out.at(0, 0, 0), 4 * v, 1e-12);  // corner sees 4 taps
}

TEST(Distill, ZeroReferenceAndLinearity) {
  std::mt19937_64 rng(4);
  const DynamicKernel k = normalize_kernel(raw(random_tensor({3, 3, 3}, rng)));
  const Tensor zero = distill_reference(constant(Tensor({4, 4, 3}, 0.0)), k).value();
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  const Tensor x = random_tensor({4, 5, 3}, rng), y = random_tensor({4, 5, 3}, rng);
  const double a = 1.7, b = -0.3;
  const Tensor lhs = distill_reference(ops::add(ops::scale(constant(x), a), ops::scale(constant(y), b)), k).value();
  const Tensor rhs = ops::add(ops::scale(distill_reference(constant(x), k), a),
                              ops::scale(distill_reference(constant(y), k), b))
                         .value();
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Distill, Contracts) {
  EXPECT_THROW(distill_reference(constant(Tensor({4, 4, 3})), raw(Tensor({3, 3, 3}))), ContractError);
  const DynamicKernel k = normalize_kernel(raw(Tensor({3, 3, 2})));
  EXPECT_THROW(distill_reference(constant(Tensor({4, 4, 3})), k), ShapeError);
}

TEST(Distill, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Var ref = parameter(random_tensor({4, 5, 3}, rng));
  Var k = parameter(random_tensor({3, 3, 3}, rng));
  const Tensor probe = random_tensor({4, 5, 3}, rng);
  auto loss = [&] { return ops::dot(distill_reference(ref, normalize_kernel({k, false})), constant(probe)); };
  const auto r = check_gradients(loss, {{"ref", ref}, {"k", k}}, 1e-5, 60);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Compensate, AnalyticCases) {
  std::mt19937_64 rng(6);
  const Tensor fr = random_tensor({3, 4, 2}, rng), fg = random_tensor({3, 4, 2}, rng), fl = random_tensor({3, 4, 2}, rng);
  const Tensor zero({3, 4, 2}, 0.0);
  EXPECT_EQ(compensate(constant(fr), constant(zero), constant(zero)).value(), fr);
  const Tensor out = compensate(constant(zero), constant(fg), constant(fl)).value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], fg[i] + 0.5 * fl[i], 1e-15);
}

TEST(Compensate, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(7);
  const Tensor fr = random_tensor({3, 5, 2}, rng), fg = random_tensor({3, 5, 2}, rng), fl = random_tensor({3, 5, 2}, rng);
  const Tensor out = compensate(constant(fr), constant(fg), constant(fl)).value();
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 2; ++c) {
        const double gate = 1.0 / (1.0 + std::exp(-fl.at(y, 4 - x, c) * fr.at(y, x, c)));
        EXPECT_NEAR(out.at(y, x, c), fr.at(y, x, c) + fg.at(y, x, c) + fl.at(y, x, c) * gate, 1e-7);
      }
  EXPECT_THROW(compensate(constant(fr), constant(fg), constant(Tensor({3, 4, 2}))), ShapeError);
}

class AcsBlocks : public ::testing::Test {
 protected:
  ParamStore store;
  Rng rng{11};
};

TEST_F(AcsBlocks, KernelNetShapesDepthAndZeroProjection) {
  KernelNet net(store, "psi", 16, 32, 4, rng);
  EXPECT_EQ(net.depth(), 3);  // 16x32 -> 8x16 -> 4x8 -> 2x4
  KernelNet small(store, "psi_small", 4, 4, 4, rng);
  EXPECT_EQ(small.depth(), 1);
  std::mt19937_64 g(1);
  const DynamicKernel k = compute_dynamic_kernel(constant(random_tensor({16, 32, 4}, g)),
                                                 constant(random_tensor({16, 32, 4}, g)), net, ops::NormMode::Frozen);
  EXPECT_EQ(k.weights.value().dims(), (Dims{3, 3, 4}));
  EXPECT_FALSE(k.normalized);
  for (double v : k.weights.value().values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(KernelNet(store, "psi_bad", 2, 8, 4, rng), ConfigError);
  EXPECT_THROW(compute_dynamic_kernel(constant(Tensor({16, 32, 4})), constant(Tensor({16, 30, 4})), net,
                                      ops::NormMode::Frozen),
               ShapeError);
}

TEST_F(AcsBlocks, KernelNetGradientMatchesFiniteDifferences) {
  KernelNet net(store, "psi", 6, 7, 3, rng);
  std::mt19937_64 g(2);
  randomize_store(store, g);
  Var ref = parameter(random_tensor({6, 7, 3}, g));
  Var left = parameter(random_tensor({6, 7, 3}, g));
  const Tensor probe = random_tensor({3, 3, 3}, g);
  auto loss = [&] {
    return ops::dot(compute_dynamic_kernel(ref, left, net, ops::NormMode::Frozen).weights, constant(probe));
  };
  auto inputs = named_parameters(store);
  inputs.emplace_back("ref", ref);
  inputs.emplace_back("left", left);
  const auto r = check_gradients(loss, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(r.checked, 50);
}

TEST_F(AcsBlocks, ZeroWeightFuseAndSeamAreIdentities) {
  SketchFuseBlock fuse(store, "fuse", 3, 2, rng);
  SeamBlock sb(store, "seam", 3, rng);
  zero_trainable(store);
  std::mt19937_64 g(3);
  const Tensor comp = random_tensor({4, 5, 3}, g), sk = random_tensor({4, 5, 2}, g), left = random_tensor({4, 5, 3}, g);
  EXPECT_EQ(sketch_fuse(constant(comp), constant(sk), fuse).value(), comp);
  EXPECT_EQ(seam(constant(left), constant(comp), sb).value(), concat_width(left, comp));
  EXPECT_THROW(sketch_fuse(constant(comp), constant(Tensor({4, 4, 2})), fuse), ShapeError);
}

TEST_F(AcsBlocks, FuseAndSeamGradientsMatchFiniteDifferences) {
  SketchFuseBlock fuse(store, "fuse", 3, 2, rng);
  SeamBlock sb(store, "seam", 3, rng);
  std::mt19937_64 g(4);
  randomize_store(store, g);
  Var comp = parameter(random_tensor({4, 5, 3}, g));
  Var sk = parameter(random_tensor({4, 5, 2}, g));
  Var left = parameter(random_tensor({4, 5, 3}, g));
  const Tensor probe = random_tensor({4, 10, 3}, g);
  auto loss = [&] { return ops::dot(seam(left, sketch_fuse(comp, sk, fuse), sb), constant(probe)); };
  auto inputs = named_parameters(store);
  inputs.emplace_back("comp", comp);
  inputs.emplace_back("sketch", sk);
  inputs.emplace_back("left", left);
  const auto r = check_gradients(loss, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST_F(AcsBlocks, ForwardPreservesShapeAndStaysFinite) {
  AcsModule m(store, "acs", {4, 4, 3, 2}, rng);
  std::mt19937_64 g(5);
  randomize_store(store, g);
  const Var out = acs_forward(constant(random_tensor({4, 8, 3}, g)), constant(random_tensor({4, 4, 3}, g)),
                              constant(random_tensor({4, 4, 2}, g)), m, ops::NormMode::Frozen);
  EXPECT_EQ(out.value().dims(), (Dims{4, 8, 3}));
  EXPECT_TRUE(out.value().all_finite());
  EXPECT_THROW(acs_forward(constant(Tensor({4, 6, 3})), constant(Tensor({4, 3, 3})), constant(Tensor({4, 3, 2})), m,
                           ops::NormMode::Frozen),
               ShapeError);
}

TEST_F(AcsBlocks, ZeroWeightPipelineWithZeroReferenceTrace) {
  AcsModule m(store, "acs", {4, 4, 3, 2}, rng);
  zero_trainable(store);
  std::mt19937_64 g(6);
  const Tensor f = random_tensor({4, 8, 3}, g);
  const Tensor fl = left_half(f), fr = right_half(f);
  const Tensor out =
      acs_forward(constant(f), constant(Tensor({4, 4, 3}, 0.0)), constant(random_tensor({4, 4, 2}, g)), m,
                  ops::NormMode::Frozen)
          .value();
  Tensor expect_right = fr;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) {
        const double gate = 1.0 / (1.0 + std::exp(-fl.at(y, 3 - x, c) * fr.at(y, x, c)));
        expect_right.at(y, x, c) += fl.at(y, x, c) * gate;
      }
  EXPECT_LT(max_abs_diff(out, concat_width(fl, expect_right)), 1e-12);
}

TEST_F(AcsBlocks, ZeroWeightPipelineWithReferenceAddsUniformDistillation) {
  // A zero kernel net still yields a uniform softmax kernel, so a nonzero
  // reference contributes its 3x3 channel-sum average.
  AcsModule m(store, "acs", {4, 4, 3, 2}, rng);
  zero_trainable(store);
  std::mt19937_64 g(7);
  const Tensor f = random_tensor({4, 8, 3}, g), ref = random_tensor({4, 4, 3}, g);
  const Tensor fl = left_half(f), fr = right_half(f);
  const Tensor out = acs_forward(constant(f), constant(ref), constant(Tensor({4, 4, 2}, 0.0)), m,
                                 ops::NormMode::Frozen)
                         .value();
  const Tensor distilled = naive_distill(ref, Tensor({3, 3, 3}, 1.0 / 3.0));
  Tensor expect_right = fr;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) {
        const double gate = 1.0 / (1.0 + std::exp(-fl.at(y, 3 - x, c) * fr.at(y, x, c)));
        expect_right.at(y, x, c) += distilled.at(y, x, c) + fl.at(y, x, c) * gate;
      }
  EXPECT_LT(max_abs_diff(out, concat_width(fl, expect_right)), 1e-12);
}

TEST_F(AcsBlocks, ForwardGradientMatchesFiniteDifferences) {
  AcsModule m(store, "acs", {4, 4, 3, 2}, rng);
  std::mt19937_64 g(8);
  randomize_store(store, g);
  Var f = parameter(random_tensor({4, 8, 3}, g));
  Var ref = parameter(random_tensor({4, 4, 3}, g));
  Var sk = parameter(random_tensor({4, 4, 2}, g));
  const Tensor probe = random_tensor({4, 8, 3}, g);
  auto loss = [&] { return ops::dot(acs_forward(f, ref, sk, m, ops::NormMode::Frozen), constant(probe)); };
  auto inputs = named_parameters(store);
  inputs.emplace_back("features", f);
  inputs.emplace_back("ref", ref);
  inputs.emplace_back("sketch", sk);
  const auto r = check_gradients(loss, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(r.checked, 200);
}
