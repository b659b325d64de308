#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"
#include "rego/errors.hpp"
#include "rego/trainer.hpp"
#include "test_env.hpp"
#include "toy_fixture.hpp"

using namespace rego;
using namespace rego::testing;

TEST(DiscriminatorHinge, ZeroLogitsGiveTwo) {
  const Var z = constant(Tensor({2, 3, 1}, 0.0));
  EXPECT_DOUBLE_EQ(discriminator_hinge(z, z).item(), 2.0);
}

TEST(DiscriminatorHinge, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor real = random_tensor({3, 4, 1}, rng, -3, 3), fake = random_tensor({3, 4, 1}, rng, -3, 3);
    double expect = 0;
    for (std::size_t i = 0; i < real.size(); ++i) expect += std::max(0.0, 1.0 - real[i]) / 12.0;
    for (std::size_t i = 0; i < fake.size(); ++i) expect += std::max(0.0, 1.0 + fake[i]) / 12.0;
    EXPECT_NEAR(discriminator_hinge(constant(real), constant(fake)).item(), expect, 1e-9);
  }
}

TEST(DiscriminatorHinge, EqualLogitsStructure) {
  for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
    const Var v = constant(Tensor({1, 1, 1}, x));
    const double expect = std::max(0.0, 1.0 - x) + std::max(0.0, 1.0 + x);
    EXPECT_NEAR(discriminator_hinge(v, v).item(), expect, 1e-12);
  }
}

class TrainerFixture : public ::testing::Test {
 protected:
  Dataset ds = toy_dataset(6, 16, 32, 1);
  GeneratorConfig gcfg = tiny_generator();
  StyleConfig scfg;
  TrainConfig tcfg = [] {
    TrainConfig t;
    t.iterations = 6;
    t.k_neighbors = 3;
    t.checkpoint_every = 3;
    return t;
  }();
};

TEST_F(TrainerFixture, PerfectReconstructionWithoutOtherTermsIsZero) {
  const Model model(gcfg, scfg);
  Rng rng(0);
  const auto ex = make_training_example(ds.samples[0], ds.sketches[0], ds.index, ds.lookup(), rng);
  TrainConfig t = tcfg;
  t.adv_weight = 0;
  t.style_weight = 0;
  const GeneratorLoss g = generator_loss(ex, constant(ex.groundtruth), model, t);
  EXPECT_EQ(g.total.item(), 0.0);
}

TEST_F(TrainerFixture, WeightedComponentsSumToTotal) {
  const Model model(gcfg, scfg);
  Rng rng(0);
  std::mt19937_64 r(3);
  for (int i = 0; i < 5; ++i) {
    const auto ex = make_training_example(ds.samples[i], ds.sketches[i], ds.index, ds.lookup(), rng);
    const Var fake = constant(random_tensor({16, 32, 3}, r, 0, 1));
    const GeneratorLoss g = generator_loss(ex, fake, model, tcfg);
    EXPECT_NEAR(g.recon + g.adv + g.style, g.total.item(), 1e-9);
    EXPECT_NEAR(g.recon, tcfg.recon_weight * ops::l1(fake, constant(ex.groundtruth)).item(), 1e-12);
  }
}

TEST_F(TrainerFixture, DefaultsMatchTheDocumentedValues) {
  const TrainConfig t;
  EXPECT_DOUBLE_EQ(t.style_weight, 0.5);
  EXPECT_DOUBLE_EQ(t.recon_weight, 1.0);
  EXPECT_DOUBLE_EQ(t.adv_weight, 0.1);
  EXPECT_EQ(t.k_neighbors, 5);
  EXPECT_DOUBLE_EQ(t.lr_g, 2e-4);
  EXPECT_DOUBLE_EQ(t.beta1, 0.5);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.style_weight = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST_F(TrainerFixture, RunIsReproducibleAndLogsAreConsistent) {
  TempDir dir("train");
  TrainOptions opts;
  opts.out_dir = dir.path();
  const TrainResult a = train(ds, gcfg, scfg, tcfg, opts);
  const TrainResult b = train(ds, gcfg, scfg, tcfg);
  ASSERT_EQ(a.log.size(), 6u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].to_json(), b.log[i].to_json());
    const auto& r = a.log[i];
    EXPECT_NEAR(r.recon + r.adv + r.style, r.total_g, 1e-9);
    EXPECT_GE(r.hinge_active_frac, 0.0);
    EXPECT_LE(r.hinge_active_frac, 1.0);
  }
  EXPECT_EQ(serialize_checkpoint(a.final_checkpoint, Precision::F64),
            serialize_checkpoint(b.final_checkpoint, Precision::F64));

  std::ifstream in(dir / "metrics.ndjson");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto rec = LogRecord::from_json(nlohmann::json::parse(line));
    EXPECT_EQ(rec.to_json(), a.log[n].to_json());
    ++n;
  }
  EXPECT_EQ(n, 6u);
  for (const char* f : {"ckpt_000003.rego", "ckpt_000006.rego", "best.rego", "final.rego"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const auto restored = model_from_checkpoint(load_checkpoint(dir / "final.rego"));
  EXPECT_EQ(restored->config().to_json(), gcfg.to_json());
}

TEST_F(TrainerFixture, DifferentSeedsDiverge) {
  TrainConfig t = tcfg;
  t.iterations = 2;
  const TrainResult a = train(ds, gcfg, scfg, t);
  t.seed = 17;
  const TrainResult b = train(ds, gcfg, scfg, t);
  EXPECT_NE(a.log[1].to_json(), b.log[1].to_json());
}

TEST_F(TrainerFixture, InvalidDatasetsAreConfigErrors) {
  Dataset empty;
  EXPECT_THROW(train(empty, gcfg, scfg, tcfg), ConfigError);
  GeneratorConfig other = gcfg;
  other.height = 32;
  other.width = 64;
  EXPECT_THROW(train(ds, other, scfg, tcfg), ConfigError);
}

TEST_F(TrainerFixture, NonFiniteLossAbortsWithLastGoodCheckpoint) {
  ds.samples[0].pixels[0] = std::nan("");
  for (auto& s : ds.samples) s.pixels[5] = std::nan("");
  TempDir dir("diverge");
  TrainOptions opts;
  opts.out_dir = dir.path();
  try {
    train(ds, gcfg, scfg, tcfg, opts);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 1);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "last_good.rego"));
}

TEST_F(TrainerFixture, ValidationScoresAreFinite) {
  const Model model(gcfg, scfg);
  const ValidationScores v = validate_model(model, ds);
  EXPECT_EQ(v.samples, 6u);
  EXPECT_GT(v.recon, 0.0);
  EXPECT_GE(v.style, 0.0);
}
