#include <gtest/gtest.h>

#include <fstream>

#include "model_utils.hpp"
#include "rego/checkpoint.hpp"
#include "rego/errors.hpp"
#include "rego/toy_data.hpp"
#include "test_env.hpp"

using namespace rego;
using namespace rego::testing;

namespace {

GeneratorConfig tiny() {
  GeneratorConfig c;
  c.height = 16;
  c.width = 32;
  c.base_channels = 4;
  c.decoder_layers = 3;
  return c;
}

}  // namespace

TEST(Checkpoint, F64RoundTripIsBitExact) {
  Model m(tiny(), StyleConfig{});
  std::mt19937_64 r(1);
  randomize_store(m.store(), r);
  const ModelCheckpoint ck = snapshot(m, 42, "rng-state");
  const ModelCheckpoint back = deserialize_checkpoint(serialize_checkpoint(ck, Precision::F64));
  EXPECT_EQ(back.tensors, ck.tensors);
  EXPECT_EQ(back.iteration, 42);
  EXPECT_EQ(back.rng_state, "rng-state");
  EXPECT_EQ(back.generator.to_json(), ck.generator.to_json());
  EXPECT_EQ(back.version, kCheckpointVersion);

  const auto restored = model_from_checkpoint(back);
  const Tensor left = left_half(make_toy_scene(16, 32, 1));
  EXPECT_EQ(outpaint(*restored, left, std::nullopt, std::nullopt).composite,
            outpaint(m, left, std::nullopt, std::nullopt).composite);
}

TEST(Checkpoint, F32RoundTripIsCloseAndOutputsAgree) {
  Model m(tiny(), StyleConfig{});
  std::mt19937_64 r(2);
  randomize_store(m.store(), r);
  TempDir dir("ckpt");
  save_checkpoint(dir / "m.rego", snapshot(m), Precision::F32);
  const auto restored = model_from_checkpoint(load_checkpoint(dir / "m.rego"));
  for (const auto& [name, t] : m.store().snapshot()) {
    EXPECT_LT(max_abs_diff(restored->store().get(name).value(), t), 1e-6) << name;
  }
  const Tensor left = left_half(make_toy_scene(16, 32, 2));
  const Tensor a = outpaint(m, left, std::nullopt, std::nullopt).right_half;
  const Tensor b = outpaint(*restored, left, std::nullopt, std::nullopt).right_half;
  EXPECT_LT(max_abs_diff(a, b), 1e-5);
}

TEST(Checkpoint, SerializationIsDeterministic) {
  const Model a(tiny(), StyleConfig{}), b(tiny(), StyleConfig{});
  EXPECT_EQ(serialize_checkpoint(snapshot(a), Precision::F64), serialize_checkpoint(snapshot(b), Precision::F64));
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const Model m(tiny(), StyleConfig{});
  auto bytes = serialize_checkpoint(snapshot(m));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), IoError);
  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  EXPECT_THROW(deserialize_checkpoint(truncated), IoError);
  EXPECT_THROW(deserialize_checkpoint({}), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.rego"), IoError);
}

TEST(Checkpoint, ManifestMustMatchArchitecture) {
  const Model m(tiny(), StyleConfig{});
  ModelCheckpoint ck = snapshot(m);
  ck.tensors.erase(ck.tensors.begin());
  EXPECT_THROW(model_from_checkpoint(ck), NotFoundError);
  ck = snapshot(m);
  ck.tensors["extra.weight"] = Tensor({1});
  EXPECT_THROW(model_from_checkpoint(ck), ConfigError);
}
