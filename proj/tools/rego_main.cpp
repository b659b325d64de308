// rego: data preparation, training, evaluation, inference and serving.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "rego/checkpoint.hpp"
#include "rego/config.hpp"
#include "rego/errors.hpp"
#include "rego/image_io.hpp"
#include "rego/logging.hpp"
#include "rego/metrics.hpp"
#include "rego/service.hpp"
#include "rego/toy_data.hpp"
#include "rego/trainer.hpp"

namespace fs = std::filesystem;
using namespace rego;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitBadArgs = 2;
constexpr int kExitIo = 3;
constexpr int kExitConfig = 4;

// Flags that override config keys. Values stay strings until the merged
// config is interpreted, so file < env < flag precedence is uniform.
class Overrides {
 public:
  explicit Overrides(const std::vector<ConfigKey>& schema) {
    for (const auto& k : schema) schema_[k.name] = k;
  }

  void bind(CLI::App* cmd, const std::string& flag, const std::string& key) {
    const ConfigKey& k = schema_.at(key);
    auto& slot = slots_.emplace_back(std::make_unique<Slot>());
    slot->key = key;
    slot->option = cmd->add_option(flag, slot->value, k.help + " [config " + key + ", env " + Config::env_name(k) + "]");
    slot->option->default_str(k.default_value.empty() ? "\"\"" : k.default_value);
  }

  void apply(Config& cfg) const {
    for (const auto& s : slots_) {
      if (s->option->count() > 0) cfg.set(s->key, s->value, s->option->get_name());
    }
  }

 private:
  struct Slot {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
  };
  std::map<std::string, ConfigKey> schema_;
  std::vector<std::unique_ptr<Slot>> slots_;
};

std::string out_sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_filename(out.stem().string() + suffix + (out.has_extension() ? out.extension().string() : ".png"));
  return p.string();
}

void require_dims(const Tensor& t, int h, int w, const std::string& what) {
  if (t.height() != h || t.width() != w) {
    throw ShapeError(what + " is " + std::to_string(t.height()) + "x" + std::to_string(t.width()) +
                     " but the checkpoint expects " + std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-guided image outpainting toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  int verbose = 0;
  Overrides overrides(default_schema());
  app.add_option("--config", config_path, "Config file (key = value with [sections])")->check(CLI::ExistingFile);
  app.add_flag("-v,--verbose", verbose, "Log progress (-vv for debug output)");
  overrides.bind(&app, "--seed", "seed");

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Resize images, extract sketches and build the reference index");
  std::string prep_images, prep_out;
  prep->add_option("--images", prep_images, "Directory of PNG/JPEG images")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--out", prep_out, "Output dataset directory")->required();
  overrides.bind(prep, "--height", "data.height");
  overrides.bind(prep, "--width", "data.width");
  overrides.bind(prep, "--threshold", "data.threshold");
  overrides.bind(prep, "--k", "data.k");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the generator on a prepared dataset");
  std::string train_data, train_out;
  train_cmd->add_option("--data", train_data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train_out, "Run directory for checkpoints and metrics.ndjson")->required();
  overrides.bind(train_cmd, "--iterations", "train.iterations");
  overrides.bind(train_cmd, "--batch-size", "train.batch_size");
  overrides.bind(train_cmd, "--lr-g", "train.lr_g");
  overrides.bind(train_cmd, "--lr-d", "train.lr_d");
  overrides.bind(train_cmd, "--style-weight", "train.style_weight");
  overrides.bind(train_cmd, "--recon-weight", "train.recon_weight");
  overrides.bind(train_cmd, "--adv-weight", "train.adv_weight");
  overrides.bind(train_cmd, "--k-neighbors", "train.k_neighbors");
  overrides.bind(train_cmd, "--checkpoint-every", "train.checkpoint_every");
  overrides.bind(train_cmd, "--precision", "train.precision");
  overrides.bind(train_cmd, "--base-channels", "model.base_channels");
  overrides.bind(train_cmd, "--decoder-layers", "model.decoder_layers");
  overrides.bind(train_cmd, "--acs-layers", "model.acs_layers");
  overrides.bind(train_cmd, "--alpha", "style.alpha");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Compute IS and FID of rebuilt test images");
  std::string eval_ckpt, eval_data, eval_out, eval_index;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "Prepared test dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--index", eval_index, "Training dataset to draw references from (default: the test set itself)")
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval_out, "Report JSON path (stdout when omitted)");
  overrides.bind(eval_cmd, "--backend", "eval.backend");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Outpaint the right half of one left image");
  std::string infer_ckpt, infer_left, infer_sketch, infer_ref, infer_index, infer_out;
  infer_cmd->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--left", infer_left, "Left half image (H x W/2)")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--sketch", infer_sketch, "Right-half sketch; omitted means random outpainting")
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--reference", infer_ref, "Reference image (full or right half)")->check(CLI::ExistingFile);
  infer_cmd->add_option("--index", infer_index, "Prepared dataset used to retrieve a reference when none is given");
  infer_cmd->add_option("--out", infer_out, "Composite PNG path; the right half goes to <stem>_right.png")->required();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP outpainting service");
  overrides.bind(serve_cmd, "--checkpoint", "serve.checkpoint");
  overrides.bind(serve_cmd, "--index", "serve.index");
  overrides.bind(serve_cmd, "--port", "serve.port");
  overrides.bind(serve_cmd, "--host", "serve.host");

  // make-toy-data
  auto* toy_cmd = app.add_subcommand("make-toy-data", "Write procedural landscape images for smoke tests");
  std::string toy_out;
  int toy_count = 10;
  toy_cmd->add_option("--out", toy_out, "Output image directory")->required();
  toy_cmd->add_option("--count", toy_count, "Number of images")->capture_default_str()->check(CLI::PositiveNumber);
  overrides.bind(toy_cmd, "--height", "data.height");
  overrides.bind(toy_cmd, "--width", "data.width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadArgs;
  }

  log::set_level(verbose >= 2 ? log::Level::Debug : verbose == 1 ? log::Level::Info : log::Level::Warning);

  try {
    Config cfg(default_schema());
    if (!config_path.empty()) cfg.merge_file(config_path);
    cfg.merge_env([](const char* name) { return std::getenv(name); });
    overrides.apply(cfg);

    if (*prep) {
      const PrepareOptions opts = prepare_options_from(cfg);
      const GradientEdgeDetector detector;
      const RandomProjectionEmbedder embedder(opts.seed);
      const Dataset ds = prepare_dataset(prep_images, opts, detector, embedder);
      save_dataset(ds, prep_out);
      std::cout << "prepared " << ds.samples.size() << " samples in " << prep_out << "\n";
    } else if (*train_cmd) {
      const Dataset ds = load_dataset(train_data);
      TrainOptions topts;
      topts.out_dir = fs::path(train_out);
      topts.on_iteration = [](const LogRecord& r) {
        if (r.iter % 10 == 0) log::info("iter " + std::to_string(r.iter) + " recon " + std::to_string(r.recon));
      };
      // The prepared data fixes the resolution; data.height/width only apply to prepare-data.
      GeneratorConfig gcfg = generator_config_from(cfg);
      if (ds.samples.empty()) throw ConfigError("dataset " + train_data + " has no samples");
      gcfg.height = ds.samples.front().pixels.height();
      gcfg.width = ds.samples.front().pixels.width();
      const TrainResult res = train(ds, gcfg, style_config_from(cfg), train_config_from(cfg), topts);
      std::cout << "trained " << res.log.size() << " iterations; checkpoints in " << train_out << "\n";
    } else if (*eval_cmd) {
      const auto model = model_from_checkpoint(load_checkpoint(eval_ckpt));
      const Dataset ds = load_dataset(eval_data);
      const auto backend = make_classifier(cfg.get("eval.backend"));
      std::optional<Dataset> refs;
      if (!eval_index.empty()) refs = load_dataset(eval_index);
      const EvalReport report = evaluate(*model, ds, *backend, refs ? &*refs : nullptr);
      const std::string text = report.to_json().dump(2);
      if (eval_out.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream out(eval_out);
        if (!(out << text << "\n")) throw IoError("cannot write " + eval_out);
      }
    } else if (*infer_cmd) {
      const auto model = model_from_checkpoint(load_checkpoint(infer_ckpt));
      const GeneratorConfig& gc = model->config();
      const Tensor left = load_rgb(infer_left);
      require_dims(left, gc.height, gc.half_width(), "--left image");
      std::optional<Tensor> sketch;
      if (!infer_sketch.empty()) {
        const Tensor gray = load_gray(infer_sketch);
        require_dims(gray, gc.height, gc.half_width(), "--sketch image");
        sketch = binarize(gray, 0.5).mask;
      }
      std::optional<Tensor> reference;
      std::string reference_id = "none";
      if (!infer_ref.empty()) {
        Tensor ref = load_rgb(infer_ref);
        if (ref.height() == gc.height && ref.width() == gc.width) ref = right_half(ref);
        require_dims(ref, gc.height, gc.half_width(), "--reference image");
        reference = ref;
        reference_id = fs::path(infer_ref).stem().string();
      } else if (!infer_index.empty()) {
        const auto pool = ReferencePool::load(infer_index);
        reference_id = pool->rank_left(left, 1).front().id;
        const Tensor& full = pool->images.at(reference_id);
        require_dims(full, gc.height, gc.width, "reference " + reference_id);
        reference = right_half(full);
      }
      const OutpaintResult out = outpaint(*model, left, sketch, reference);
      if (fs::path(infer_out).has_parent_path()) fs::create_directories(fs::path(infer_out).parent_path());
      save_png(infer_out, out.composite);
      const std::string right_path = out_sibling(infer_out, "_right");
      save_png(right_path, out.right_half);
      std::cout << "reference: " << reference_id << "\n"
                << "mode: " << (sketch ? "sketch" : "random") << "\n"
                << "composite: " << infer_out << "\n"
                << "right_half: " << right_path << "\n";
    } else if (*serve_cmd) {
      const std::string ckpt = cfg.get("serve.checkpoint");
      const std::string index = cfg.get("serve.index");
      const long port = cfg.get_int("serve.port");
      if (port < 1 || port > 65535) throw ConfigError("serve.port out of range");
      if (ckpt.empty()) throw ConfigError("serve needs --checkpoint (or REGO_CHECKPOINT)");
      OutpaintService service;
      // Bind first so /health answers "loading" while weights are read.
      std::thread loader([&] {
        try {
          if (!index.empty()) service.load_pool(index);
          service.load_checkpoint(ckpt);
        } catch (const std::exception& e) {
          log::error(std::string("serve: loading failed: ") + e.what());
          std::exit(kExitIo);
        }
      });
      std::cerr << "listening on " << cfg.get("serve.host") << ":" << port << "\n";
      const bool ok = service.run(cfg.get("serve.host"), static_cast<int>(port));
      loader.join();
      if (!ok) throw IoError("cannot listen on port " + std::to_string(port));
    } else if (*toy_cmd) {
      const int h = static_cast<int>(cfg.get_int("data.height"));
      const int w = static_cast<int>(cfg.get_int("data.width"));
      write_toy_images(toy_out, toy_count, h, w, cfg.get_uint("seed"));
      std::cout << "wrote " << toy_count << " images to " << toy_out << "\n";
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NotFoundError& e) {
    std::cerr << "not found: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidValueError& e) {
    std::cerr << "invalid value: " << e.what() << "\n";
    return kExitBadArgs;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}
