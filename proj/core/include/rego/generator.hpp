#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "rego/acs.hpp"
#include "rego/dataprep.hpp"
#include "rego/nn.hpp"
#include "rego/styleloss.hpp"

namespace rego {

struct GeneratorConfig {
  int height = 64;
  int width = 128;
  int base_channels = 32;
  int decoder_layers = 4;
  /// Per decoder layer; empty means "every layer but the last".
  std::vector<bool> acs_enabled;
  std::uint64_t seed = 0;
  double sketch_threshold = kDefaultSketchThreshold;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  bool acs_at(int layer) const;
  int acs_count() const;
  int half_width() const { return width / 2; }
  /// Output channels of decoder layer `layer` (< decoder_layers - 1).
  int layer_channels(int layer) const;
  int layer_height(int layer) const;
  int layer_half_width(int layer) const;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Inputs to one generator pass. `left` is H x W/2 x 3, sketches are
/// H x W/2 x 1, `reference_right` is H x W/2 x 3.
struct GeneratorInputs {
  Var left;
  Var left_sketch;
  Var sketch_right;
  Var reference_right;
};

/// Conv encoder-decoder with ACS modules after the configured decoder
/// layers, plus separate reference and sketch encoders.
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, ParamStore& store, Rng& rng);

  /// Encodes the left image and sketch and widens the bottleneck to h x 2w x c.
  Var encode(const Var& left, const Var& left_sketch) const;
  /// One feature map per decoder layer (undefined where ACS is disabled).
  std::vector<Var> encode_reference(const Var& reference_right) const;
  std::vector<Var> encode_sketch(const Var& sketch_right) const;
  /// Returns the H x W x 3 reconstruction in [0,1].
  Var decode(const Var& features, const std::vector<Var>& ref_pyramid, const std::vector<Var>& sketch_pyramid,
             ops::NormMode mode) const;
  Var forward(const GeneratorInputs& in, ops::NormMode mode) const;

  const GeneratorConfig& config() const noexcept { return cfg_; }
  int acs_count() const;
  const AcsModule& acs(int layer) const;

 private:
  struct Encoder {
    Conv2d stem;
    std::vector<Conv2d> down;
  };
  Encoder make_encoder(ParamStore& store, const std::string& prefix, int in_channels, Rng& rng) const;
  std::vector<Var> run_encoder(const Encoder& enc, const Var& x) const;
  std::vector<Var> pyramid(const Encoder& enc, const Var& x, int channels, const char* what) const;
  void check_input(const Var& x, int channels, const char* what) const;

  GeneratorConfig cfg_;
  Encoder encoder_, ref_encoder_, sketch_encoder_;
  Conv2d expand_;
  std::vector<Conv2d> decoder_;
  std::vector<std::optional<AcsModule>> acs_;
};

/// Four-layer patch discriminator producing a grid of real/fake logits.
class Discriminator {
 public:
  Discriminator(int base_channels, ParamStore& store, Rng& rng);
  Var operator()(const Var& image) const;

 private:
  std::vector<Conv2d> convs_;
};

/// Generator, discriminator and the frozen plug-ins they are trained with.
/// Parameters are owned by a single store with prefixes encoder., ref_encoder.,
/// sketch_encoder., expand., decoder., acs. and disc.
class Model {
 public:
  Model(GeneratorConfig gen_cfg, StyleConfig style_cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const GeneratorConfig& config() const noexcept { return gen_cfg_; }
  const StyleConfig& style_config() const noexcept { return style_cfg_; }
  ParamStore& store() noexcept { return store_; }
  const ParamStore& store() const noexcept { return store_; }
  const Generator& generator() const noexcept { return *generator_; }
  const Discriminator& discriminator() const noexcept { return *discriminator_; }
  const FeaturePlugin& style_extractor() const noexcept { return *extractor_; }
  const EdgePlugin& edge_detector() const noexcept { return edges_; }

  static std::vector<std::string> generator_prefixes();
  static std::vector<std::string> discriminator_prefixes() { return {"disc."}; }

 private:
  GeneratorConfig gen_cfg_;
  StyleConfig style_cfg_;
  ParamStore store_;
  std::unique_ptr<Generator> generator_;
  std::unique_ptr<Discriminator> discriminator_;
  std::unique_ptr<FeaturePlugin> extractor_;
  GradientEdgeDetector edges_;
};

/// Sketch of the visible left half, as seen by the encoder.
Tensor left_sketch_for(const Model& model, const Tensor& left);

struct OutpaintResult {
  Tensor right_half;  // H x W/2 x 3, generated
  Tensor composite;   // H x W x 3, left half is the verbatim input
};

/// Deterministic inference. A missing sketch means random outpainting (zero
/// sketch); a missing reference is replaced by zeros.
OutpaintResult outpaint(const Model& model, const Tensor& left, const std::optional<Tensor>& sketch_right,
                        const std::optional<Tensor>& reference_right);

}  // namespace rego
