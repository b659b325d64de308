#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rego/generator.hpp"

// File layout (all integers little-endian):
//
//   offset  size  field
//   0       8     magic "REGOCKPT"
//   8       4     u32 container format (= 1)
//   12      8     u64 header byte length N
//   20      N     UTF-8 JSON header
//   20+N    ...   tensor payload, tensors back to back
//
// Header: {"version", "iteration", "rng_state", "dtype": "f32"|"f64",
//          "config": {"generator": {...}, "style": {...}},
//          "tensors": [{"name", "shape", "offset", "count"}, ...]}
// `offset` is in bytes from the start of the payload; values are IEEE-754
// little-endian of the declared dtype.

namespace rego {

inline constexpr int kCheckpointVersion = 1;

enum class Precision { F32, F64 };

struct ModelCheckpoint {
  int version = kCheckpointVersion;
  GeneratorConfig generator;
  StyleConfig style;
  std::map<std::string, Tensor> tensors;
  long iteration = 0;
  std::string rng_state;
};

std::vector<std::uint8_t> serialize_checkpoint(const ModelCheckpoint& ckpt, Precision precision = Precision::F32);
ModelCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt,
                     Precision precision = Precision::F32);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

ModelCheckpoint snapshot(const Model& model, long iteration = 0, std::string rng_state = {});
/// Rebuilds the architecture from the stored config and loads every tensor;
/// the manifest must match exactly.
std::unique_ptr<Model> model_from_checkpoint(const ModelCheckpoint& ckpt);

}  // namespace rego
