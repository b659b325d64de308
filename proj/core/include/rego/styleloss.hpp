#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rego/autograd.hpp"

namespace rego {

/// Channel-by-channel inner products of a layer's activations, divided by
/// the number of spatial positions. Symmetric PSD.
struct GramStyle {
  Var matrix;  // N x N
  int layer = 0;
};

struct StyleConfig {
  double alpha = 0.1;
  std::vector<double> layer_weights = std::vector<double>(5, 0.2);
  std::string extractor = "random-pyramid:seed=0";

  void validate() const;
  nlohmann::json to_json() const;
  static StyleConfig from_json(const nlohmann::json& j);
};

/// Multi-layer activation source for style statistics.
class FeaturePlugin {
 public:
  virtual ~FeaturePlugin() = default;
  /// One activation map per style layer, shallow to deep.
  virtual std::vector<Var> activations(const Var& image) const = 0;
  virtual int layer_count() const = 0;
  virtual std::string id() const = 0;
};

/// Frozen, seeded pyramid of stride-2 3x3 conv + ReLU stages. Weights are
/// constants (no gradient accumulates into them).
class RandomPyramidExtractor final : public FeaturePlugin {
 public:
  explicit RandomPyramidExtractor(std::uint64_t seed = 0, std::vector<int> widths = {8, 16, 32, 32, 32});
  std::vector<Var> activations(const Var& image) const override;
  int layer_count() const override { return static_cast<int>(weights_.size()); }
  std::string id() const override;

 private:
  std::uint64_t seed_;
  std::vector<int> widths_;
  std::vector<Var> weights_;
  std::vector<Var> biases_;
};

std::unique_ptr<FeaturePlugin> make_feature_extractor(const std::string& id);

GramStyle gram_matrix(const Var& feat, int layer = 0);

/// Cosine similarity of the flattened matrices. A zero-norm operand yields 0
/// and sets `*degenerate` (a warning is logged).
Var style_similarity(const GramStyle& a, const GramStyle& b, bool* degenerate = nullptr);

/// [alpha - SM(gen, left) + SM(gen, ref)]_+
Var style_rank_layer(const GramStyle& gen, const GramStyle& left, const GramStyle& ref, double alpha);

struct StyleLoss {
  Var total;
  std::vector<double> layer_losses;  // unweighted, per layer
  int active_layers = 0;             // layers with a strictly positive hinge
  bool degenerate = false;
};

/// Weighted sum of per-layer ranking losses over the extractor's layers.
StyleLoss style_rank_total(const Var& gen_right, const Var& left, const Var& ref, const FeaturePlugin& extractor,
                           const StyleConfig& cfg);

}  // namespace rego
