#include "rego/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include "rego/errors.hpp"
#include "rego/logging.hpp"

namespace rego {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("train.iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  for (double v : {lr_g, lr_d}) {
    if (!(v > 0.0)) throw ConfigError("learning rates must be > 0");
  }
  for (double v : {style_weight, recon_weight, adv_weight}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0,1)");
  if (k_neighbors < 1) throw ConfigError("train.k_neighbors must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (!(augment_p >= 0.0 && augment_p <= 1.0)) throw ConfigError("train.augment_p must lie in [0,1]");
}

json TrainConfig::to_json() const {
  return {{"iterations", iterations},     {"batch_size", batch_size},
          {"lr_g", lr_g},                 {"lr_d", lr_d},
          {"beta1", beta1},               {"beta2", beta2},
          {"style_weight", style_weight}, {"recon_weight", recon_weight},
          {"adv_weight", adv_weight},     {"seed", seed},
          {"k_neighbors", k_neighbors},   {"checkpoint_every", checkpoint_every},
          {"augment_sketch", augment_sketch}, {"augment_p", augment_p},
          {"checkpoint_precision", checkpoint_precision == Precision::F32 ? "f32" : "f64"}};
}

json LogRecord::to_json() const {
  return {{"iter", iter},   {"total_g", total_g}, {"recon", recon}, {"adv", adv},
          {"style", style}, {"d_loss", d_loss},   {"hinge_active_frac", hinge_active_frac}};
}

LogRecord LogRecord::from_json(const json& j) {
  LogRecord r;
  r.iter = j.at("iter").get<long>();
  r.total_g = j.at("total_g").get<double>();
  r.recon = j.at("recon").get<double>();
  r.adv = j.at("adv").get<double>();
  r.style = j.at("style").get<double>();
  r.d_loss = j.at("d_loss").get<double>();
  r.hinge_active_frac = j.at("hinge_active_frac").get<double>();
  return r;
}

Var composite_of(const TrainingExample& example, const Var& generated) {
  const int half = example.left.width();
  return ops::concat_width(constant(example.left), ops::slice_width(generated, half, half));
}

GeneratorLoss generator_loss(const TrainingExample& example, const Var& generated, const Model& model,
                             const TrainConfig& cfg) {
  if (!generated.value().same_shape(example.groundtruth)) {
    throw ShapeError("generator_loss: generated " + generated.value().shape_string() + " vs groundtruth " +
                     example.groundtruth.shape_string());
  }
  GeneratorLoss out;
  Var total = ops::scale(ops::l1(generated, constant(example.groundtruth)), cfg.recon_weight);
  out.recon = total.item();

  if (cfg.adv_weight > 0.0) {
    const Var fake_logits = model.discriminator()(composite_of(example, generated));
    const Var adv = ops::scale(ops::mean(fake_logits), -cfg.adv_weight);
    out.adv = adv.item();
    total = ops::add(total, adv);
  }

  const int half = example.left.width();
  const Var gen_right = ops::slice_width(generated, half, half);
  const StyleLoss style = style_rank_total(gen_right, constant(example.left), constant(example.reference_right),
                                           model.style_extractor(), model.style_config());
  out.hinge_active_frac = static_cast<double>(style.active_layers) / static_cast<double>(style.layer_losses.size());
  if (cfg.style_weight > 0.0) {
    const Var s = ops::scale(style.total, cfg.style_weight);
    out.style = s.item();
    total = ops::add(total, s);
  }
  out.total = total;
  return out;
}

Var discriminator_hinge(const Var& real_logits, const Var& fake_logits) {
  const Var real_term = ops::mean(ops::relu(ops::add_scalar(ops::scale(real_logits, -1.0), 1.0)));
  const Var fake_term = ops::mean(ops::relu(ops::add_scalar(fake_logits, 1.0)));
  return ops::add(real_term, fake_term);
}

Var discriminator_loss(const TrainingExample& example, const Var& generated, const Model& model) {
  const Var real = model.discriminator()(constant(example.groundtruth));
  const Var fake = model.discriminator()(ops::detach(composite_of(example, generated)));
  return discriminator_hinge(real, fake);
}

namespace {

std::string rng_state_of(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::string checkpoint_name(long iter) {
  std::ostringstream os;
  os << "ckpt_" << std::setw(6) << std::setfill('0') << iter << ".rego";
  return os.str();
}

class MetricsLog {
 public:
  explicit MetricsLog(const std::optional<fs::path>& dir) {
    if (!dir) return;
    fs::create_directories(*dir);
    out_.open(*dir / "metrics.ndjson", std::ios::trunc);
    if (!out_) throw IoError("cannot open metrics log in " + dir->string());
  }
  void append(const LogRecord& r) {
    if (!out_.is_open()) return;
    std::lock_guard lock(mutex_);
    out_ << r.to_json().dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::mutex mutex_;
};

}  // namespace

TrainResult train(const Dataset& dataset, const GeneratorConfig& gen_cfg, const StyleConfig& style_cfg,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (dataset.samples.empty()) throw ConfigError("training dataset is empty");
  if (dataset.sketches.size() != dataset.samples.size()) throw ConfigError("dataset sketches do not match samples");
  for (const auto& s : dataset.samples) {
    if (s.height() != gen_cfg.height || s.width() != gen_cfg.width) {
      throw ConfigError("sample " + s.id + " is " + s.pixels.shape_string() + " but the generator expects " +
                        std::to_string(gen_cfg.height) + "x" + std::to_string(gen_cfg.width));
    }
  }

  TrainResult result;
  result.model = std::make_unique<Model>(gen_cfg, style_cfg);
  Model& model = *result.model;
  Adam opt_g(model.store().parameters(Model::generator_prefixes()), {cfg.lr_g, cfg.beta1, cfg.beta2, 1e-8});
  Adam opt_d(model.store().parameters(Model::discriminator_prefixes()), {cfg.lr_d, cfg.beta1, cfg.beta2, 1e-8});

  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    std::ofstream(*options.out_dir / "train_config.json")
        << json{{"train", cfg.to_json()}, {"generator", gen_cfg.to_json()}, {"style", style_cfg.to_json()}}.dump(2)
        << '\n';
  }
  MetricsLog metrics(options.out_dir);

  std::vector<Tensor> left_sketches;
  left_sketches.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) left_sketches.push_back(left_sketch_for(model, left_half(s.pixels)));

  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_sample(0, dataset.samples.size() - 1);
  const SampleLookup lookup = dataset.lookup();
  double best_recon = std::numeric_limits<double>::infinity();
  const double inv_batch = 1.0 / cfg.batch_size;

  auto abort_diverged = [&](const std::string& what, long iter) {
    if (options.out_dir) {
      save_checkpoint(*options.out_dir / "last_good.rego", snapshot(model, iter - 1, rng_state_of(rng)),
                      cfg.checkpoint_precision);
    }
    throw DivergenceError(what, iter);
  };

  for (long iter = 1; iter <= cfg.iterations; ++iter) {
    struct Item {
      TrainingExample example;
      Var generated;
    };
    std::vector<Item> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = pick_sample(rng);
      const ImageSample& sample = dataset.samples[idx];
      Sketch sketch = dataset.sketches[idx];
      if (cfg.augment_sketch) sketch = augment_sketch(sketch, cfg.augment_p, rng);
      TrainingExample ex = make_training_example(sample, sketch, dataset.index, lookup, rng, cfg.k_neighbors);
      GeneratorInputs in{constant(ex.left), constant(left_sketches[idx]), constant(ex.sketch_right),
                         constant(ex.reference_right)};
      Var generated = model.generator().forward(in, ops::NormMode::Train);
      batch.push_back({std::move(ex), std::move(generated)});
    }

    LogRecord rec;
    rec.iter = iter;

    opt_d.zero_grad();
    for (const auto& item : batch) {
      const Var d = discriminator_loss(item.example, item.generated, model);
      if (!std::isfinite(d.item())) abort_diverged("discriminator loss is not finite", iter);
      rec.d_loss += d.item() * inv_batch;
      backward(ops::scale(d, inv_batch));
    }
    opt_d.step();

    model.store().zero_grad();
    for (const auto& item : batch) {
      const GeneratorLoss g = generator_loss(item.example, item.generated, model, cfg);
      if (!std::isfinite(g.total.item())) abort_diverged("generator loss is not finite", iter);
      rec.recon += g.recon * inv_batch;
      rec.adv += g.adv * inv_batch;
      rec.style += g.style * inv_batch;
      rec.total_g += g.total.item() * inv_batch;
      rec.hinge_active_frac += g.hinge_active_frac * inv_batch;
      backward(ops::scale(g.total, inv_batch));
    }
    if (rec.recon < best_recon) {
      best_recon = rec.recon;
      result.best_checkpoint = snapshot(model, iter - 1, rng_state_of(rng));
    }
    opt_g.step();

    result.log.push_back(rec);
    metrics.append(rec);
    if (options.on_iteration) options.on_iteration(rec);

    if (options.out_dir && iter % cfg.checkpoint_every == 0) {
      save_checkpoint(*options.out_dir / checkpoint_name(iter), snapshot(model, iter, rng_state_of(rng)),
                      cfg.checkpoint_precision);
      save_checkpoint(*options.out_dir / "best.rego", result.best_checkpoint, cfg.checkpoint_precision);
    }
  }

  result.final_checkpoint = snapshot(model, cfg.iterations, rng_state_of(rng));
  if (options.out_dir) {
    save_checkpoint(*options.out_dir / "final.rego", result.final_checkpoint, cfg.checkpoint_precision);
    save_checkpoint(*options.out_dir / "best.rego", result.best_checkpoint, cfg.checkpoint_precision);
  }
  return result;
}

ValidationScores validate_model(const Model& model, const Dataset& dataset) {
  NoGradGuard no_grad;
  ValidationScores scores;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const ImageSample& s = dataset.samples[i];
    const auto& nb = dataset.index.neighbors(s.id);
    const Tensor left = left_half(s.pixels);
    const Tensor ref = right_half(dataset.sample(nb.front().id).pixels);
    GeneratorInputs in{constant(left), constant(left_sketch_for(model, left)),
                       constant(right_half(dataset.sketches[i].mask)), constant(ref)};
    const Var generated = model.generator().forward(in, ops::NormMode::Frozen);
    scores.recon += ops::l1(generated, constant(s.pixels)).item();
    const int half = left.width();
    scores.style += style_rank_total(ops::slice_width(generated, half, half), constant(left), constant(ref),
                                     model.style_extractor(), model.style_config())
                        .total.item();
    ++scores.samples;
  }
  if (scores.samples > 0) {
    scores.recon /= static_cast<double>(scores.samples);
    scores.style /= static_cast<double>(scores.samples);
  }
  return scores;
}

}  // namespace rego
