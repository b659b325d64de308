#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rego/dataprep.hpp"
#include "rego/generator.hpp"

namespace rego {

struct DistributionStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::size_t n = 0;

  int dim() const { return static_cast<int>(mean.size()); }
  /// Two-pass mean and unbiased covariance of the rows of `samples` (n >= 2).
  static DistributionStats from_samples(const Eigen::MatrixXd& samples);
  static DistributionStats from_vectors(const std::vector<std::vector<double>>& samples);
};

/// exp(mean KL(p(y|x) || p(y))). Each vector must be nonnegative and sum to 1 +- 1e-6.
double inception_score(const std::vector<std::vector<double>>& predictions);

/// Frechet distance between two Gaussian fits.
double fid(const DistributionStats& real, const DistributionStats& fake);

/// Feature and class-posterior backend used by evaluate().
class ClassifierPlugin {
 public:
  virtual ~ClassifierPlugin() = default;
  virtual std::vector<double> features(const Tensor& image) const = 0;
  virtual std::vector<double> probabilities(const Tensor& image) const = 0;
  virtual std::string id() const = 0;
};

/// Fixed seeded conv net: 3 stride-2 conv+ReLU stages, global pooling to a
/// 64-d feature, linear head to 10 classes, softmax.
class RandomConvClassifier final : public ClassifierPlugin {
 public:
  explicit RandomConvClassifier(std::uint64_t seed = 0, int feature_dim = 64, int classes = 10);
  std::vector<double> features(const Tensor& image) const override;
  std::vector<double> probabilities(const Tensor& image) const override;
  std::string id() const override;

 private:
  std::vector<double> logits_from_features(const std::vector<double>& f) const;

  std::uint64_t seed_;
  int feature_dim_;
  int classes_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  Eigen::MatrixXd head_;
  Eigen::VectorXd head_bias_;
};

/// Accepts "random-conv" or "random-conv:seed=N".
std::unique_ptr<ClassifierPlugin> make_classifier(const std::string& id);

struct EvalReport {
  double is = 0.0;
  double fid = 0.0;
  std::size_t n_samples = 0;
  std::string backend_id;

  nlohmann::json to_json() const;
};

/// IS and FID from ready-made image sets (composites vs groundtruth).
EvalReport evaluate_images(const std::vector<Tensor>& real, const std::vector<Tensor>& fake,
                           const ClassifierPlugin& backend);

/// Rebuilds every test image from its own sketch with its nearest neighbor as
/// reference and scores the composites against the groundtruth. With a
/// `reference_set` (the training split) neighbors are searched there, so test
/// images never act as references; without one the test set's own index is used.
EvalReport evaluate(const Model& model, const Dataset& test_set, const ClassifierPlugin& backend,
                    const Dataset* reference_set = nullptr);

}  // namespace rego
