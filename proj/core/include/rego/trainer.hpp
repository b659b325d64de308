#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "rego/checkpoint.hpp"
#include "rego/dataprep.hpp"
#include "rego/generator.hpp"

namespace rego {

struct TrainConfig {
  long iterations = 200;
  int batch_size = 1;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double style_weight = 0.5;
  double recon_weight = 1.0;
  double adv_weight = 0.1;
  std::uint64_t seed = 0;
  int k_neighbors = kDefaultNeighbors;
  long checkpoint_every = 100;
  bool augment_sketch = false;
  double augment_p = 0.3;
  Precision checkpoint_precision = Precision::F32;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Weighted loss terms of one generator step; `total` is their sum.
struct GeneratorLoss {
  Var total;
  double recon = 0.0;
  double adv = 0.0;
  double style = 0.0;
  double hinge_active_frac = 0.0;
};

/// total = recon_weight * L1(generated, groundtruth)
///       + adv_weight * (-mean D(composite))
///       + style_weight * style_rank_total(right half, left, reference).
/// `generated` is the H x W x 3 generator output for `example`.
GeneratorLoss generator_loss(const TrainingExample& example, const Var& generated, const Model& model,
                             const TrainConfig& cfg);

/// mean(max(0, 1 - real)) + mean(max(0, 1 + fake)) over patch logits.
Var discriminator_hinge(const Var& real_logits, const Var& fake_logits);
/// Hinge loss of the discriminator on the real image vs the generated composite.
Var discriminator_loss(const TrainingExample& example, const Var& generated, const Model& model);

/// Left input pasted next to the generated right half (differentiable in the latter).
Var composite_of(const TrainingExample& example, const Var& generated);

struct LogRecord {
  long iter = 0;
  double total_g = 0.0;
  double recon = 0.0;
  double adv = 0.0;
  double style = 0.0;
  double d_loss = 0.0;
  double hinge_active_frac = 0.0;

  nlohmann::json to_json() const;
  static LogRecord from_json(const nlohmann::json& j);
};

struct TrainResult {
  std::unique_ptr<Model> model;
  ModelCheckpoint final_checkpoint;
  ModelCheckpoint best_checkpoint;  // lowest reconstruction term seen
  std::vector<LogRecord> log;
};

struct TrainOptions {
  /// When set: metrics.ndjson, ckpt_<iter>.rego, best.rego, final.rego and
  /// (on divergence) last_good.rego are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const LogRecord&)> on_iteration;
};

/// Alternating discriminator/generator updates; references re-sampled per
/// iteration. Deterministic for a fixed (seed, dataset, configs).
TrainResult train(const Dataset& dataset, const GeneratorConfig& gen_cfg, const StyleConfig& style_cfg,
                  const TrainConfig& train_cfg, const TrainOptions& options = {});

struct ValidationScores {
  double recon = 0.0;  // mean L1 over full images
  double style = 0.0;  // mean unweighted-by-lambda style ranking loss
  std::size_t samples = 0;
};

/// Inference-mode reconstruction and style scores with each sample's
/// nearest neighbor as reference.
ValidationScores validate_model(const Model& model, const Dataset& dataset);

}  // namespace rego
