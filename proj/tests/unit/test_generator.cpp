#include <gtest/gtest.h>

#include "model_utils.hpp"
#include "oracles.hpp"
#include "rego/errors.hpp"
#include "rego/generator.hpp"
#include "rego/toy_data.hpp"

using namespace rego;
using namespace rego::testing;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.height = 16;
  c.width = 32;
  c.base_channels = 4;
  c.decoder_layers = 3;
  c.seed = 3;
  return c;
}

GeneratorInputs random_inputs(const GeneratorConfig& c, std::mt19937_64& rng) {
  const int h = c.height, w = c.half_width();
  return {constant(random_tensor({h, w, 3}, rng, 0, 1)), constant(random_tensor({h, w, 1}, rng, 0, 1)),
          constant(random_tensor({h, w, 1}, rng, 0, 1)), constant(random_tensor({h, w, 3}, rng, 0, 1))};
}

}  // namespace

TEST(GeneratorConfig, ValidationRules) {
  GeneratorConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.acs_count(), 2);
  EXPECT_TRUE(c.acs_at(0));
  EXPECT_FALSE(c.acs_at(2));
  c.acs_enabled = {false, false, true};
  EXPECT_THROW(c.validate(), ConfigError);
  c.acs_enabled = {true, false};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.width = 48;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.decoder_layers = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.decoder_layers = 6;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GeneratorConfig, LayerGeometry) {
  GeneratorConfig c;  // 64x128, C=32, L=4
  EXPECT_EQ(c.acs_count(), 3);
  EXPECT_EQ(c.layer_height(0), 8);
  EXPECT_EQ(c.layer_half_width(0), 8);
  EXPECT_EQ(c.layer_channels(0), 128);
  EXPECT_EQ(c.layer_height(2), 32);
  EXPECT_EQ(c.layer_channels(2), 32);
  const GeneratorConfig back = GeneratorConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Generator, ForwardShapeAndRange) {
  const GeneratorConfig c = small_config();
  ParamStore store;
  Rng rng(c.seed);
  Generator g(c, store, rng);
  std::mt19937_64 r(1);
  randomize_store(store, r, 0.8);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor out = g.forward(random_inputs(c, r), ops::NormMode::Frozen).value();
    ASSERT_EQ(out.dims(), (Dims{16, 32, 3}));
    for (double v : out.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(g.acs_count(), 2);
  EXPECT_NO_THROW(g.acs(0));
  EXPECT_THROW(g.acs(2), NotFoundError);
}

TEST(Generator, ParameterNamespaces) {
  GeneratorConfig c = small_config();
  ParamStore store;
  Rng rng(1);
  Generator g(c, store, rng);
  bool has_ref = false, has_acs = false;
  for (const auto& n : store.names()) {
    has_ref |= n.rfind("ref_encoder.", 0) == 0;
    has_acs |= n.rfind("acs.", 0) == 0;
  }
  EXPECT_TRUE(has_ref);
  EXPECT_TRUE(has_acs);

  c.acs_enabled = {false, false, false};
  ParamStore bare;
  Generator plain(c, bare, rng);
  for (const auto& n : bare.names()) {
    EXPECT_NE(n.rfind("ref_encoder.", 0), 0u) << n;
    EXPECT_NE(n.rfind("acs.", 0), 0u) << n;
  }
  EXPECT_LT(bare.parameter_count(), store.parameter_count());
}

TEST(Generator, EncodeShapesAndErrors) {
  const GeneratorConfig c = small_config();
  ParamStore store;
  Rng rng(2);
  Generator g(c, store, rng);
  std::mt19937_64 r(2);
  const GeneratorInputs in = random_inputs(c, r);
  const Var f = g.encode(in.left, in.left_sketch);
  // bottleneck widened to h x 2w with the deepest channel count
  EXPECT_EQ(f.value().dims(), (Dims{c.layer_height(0), 2 * c.layer_half_width(0), c.layer_channels(0)}));
  const auto pyr = g.encode_reference(in.reference_right);
  ASSERT_EQ(pyr.size(), 3u);
  EXPECT_EQ(pyr[1].value().dims(), (Dims{c.layer_height(1), c.layer_half_width(1), c.layer_channels(1)}));
  EXPECT_FALSE(pyr[2].defined());
  EXPECT_THROW(g.encode(constant(Tensor({16, 15, 3})), in.left_sketch), ShapeError);
  EXPECT_THROW(g.encode_reference(constant(Tensor({16, 16, 1}))), ShapeError);

  auto sk = g.encode_sketch(in.sketch_right);
  std::swap(sk[0], sk[1]);
  EXPECT_THROW(g.decode(f, pyr, sk, ops::NormMode::Frozen), ShapeError);
  EXPECT_THROW(g.decode(f, {pyr[0]}, g.encode_sketch(in.sketch_right), ops::NormMode::Frozen), ShapeError);
}

TEST(Generator, DecodeGradientAt8x16) {
  GeneratorConfig c;
  c.height = 8;
  c.width = 16;
  c.base_channels = 4;
  c.decoder_layers = 2;
  ParamStore store;
  Rng rng(4);
  Generator g(c, store, rng);
  std::mt19937_64 r(4);
  randomize_store(store, r);
  const GeneratorInputs in = random_inputs(c, r);
  Var f = parameter(g.encode(in.left, in.left_sketch).value());
  auto ref = g.encode_reference(in.reference_right);
  auto sk = g.encode_sketch(in.sketch_right);
  Var ref0 = parameter(ref[0].value()), sk0 = parameter(sk[0].value());
  const Tensor probe = random_tensor({8, 16, 3}, r);
  auto loss = [&] {
    return ops::dot(g.decode(f, {ref0, Var()}, {sk0, Var()}, ops::NormMode::Frozen), constant(probe));
  };
  std::vector<std::pair<std::string, Var>> inputs;
  for (auto& [name, v] : named_parameters(store)) {
    if (name.rfind("decoder.", 0) == 0 || name.rfind("acs.", 0) == 0) inputs.emplace_back(name, v);
  }
  inputs.emplace_back("features", f);
  inputs.emplace_back("ref0", ref0);
  inputs.emplace_back("sketch0", sk0);
  const auto res = check_gradients(loss, inputs, 1e-5, 12);
  EXPECT_LT(res.max_rel_error, 1e-3) << res.worst;
  EXPECT_GT(res.checked, 100);
}

TEST(Outpaint, PastesLeftHalfAndIsDeterministic) {
  const GeneratorConfig c = small_config();
  const Model model(c, StyleConfig{});
  const Tensor img = make_toy_scene(16, 32, 9);
  const Tensor left = left_half(img);
  const OutpaintResult a = outpaint(model, left, std::nullopt, std::nullopt);
  EXPECT_EQ(left_half(a.composite), left);
  EXPECT_EQ(right_half(a.composite), a.right_half);
  EXPECT_EQ(a.right_half.dims(), (Dims{16, 16, 3}));
  const Tensor sketch = right_half(binarize(GradientEdgeDetector().detect(img), 0.5).mask);
  const OutpaintResult b1 = outpaint(model, left, sketch, right_half(img));
  const OutpaintResult b2 = outpaint(model, left, sketch, right_half(img));
  EXPECT_EQ(b1.composite, b2.composite);
  EXPECT_EQ(left_half(b1.composite), left);
  EXPECT_THROW(outpaint(model, Tensor({8, 16, 3}), std::nullopt, std::nullopt), ConfigError);
  EXPECT_THROW(outpaint(model, left, Tensor({16, 8, 1}), std::nullopt), ConfigError);
}

TEST(Model, DiscriminatorProducesPatchLogits) {
  const Model model(small_config(), StyleConfig{});
  const Var logits = model.discriminator()(constant(Tensor({16, 32, 3}, 0.5)));
  EXPECT_EQ(logits.value().dims(), (Dims{2, 4, 1}));
  for (const auto& n : model.store().names()) {
    bool owned = n.rfind("disc.", 0) == 0;
    for (const auto& p : Model::generator_prefixes()) owned |= n.rfind(p, 0) == 0;
    EXPECT_TRUE(owned) << n;
  }
}

TEST(Model, SeedDeterminesInitialization) {
  const Model a(small_config(), StyleConfig{}), b(small_config(), StyleConfig{});
  EXPECT_EQ(a.store().snapshot(), b.store().snapshot());
  GeneratorConfig c = small_config();
  c.seed = 99;
  const Model d(c, StyleConfig{});
  EXPECT_NE(a.store().snapshot(), d.store().snapshot());
}
