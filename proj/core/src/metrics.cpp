#include "rego/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "rego/autograd.hpp"
#include "rego/errors.hpp"
#include "rego/logging.hpp"

namespace rego {

DistributionStats DistributionStats::from_samples(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2) throw ConfigError("distribution stats need at least 2 samples");
  DistributionStats s;
  s.n = static_cast<std::size_t>(samples.rows());
  s.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - s.mean.transpose();
  s.covariance = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
  return s;
}

DistributionStats DistributionStats::from_vectors(const std::vector<std::vector<double>>& samples) {
  if (samples.size() < 2) throw ConfigError("distribution stats need at least 2 samples");
  const std::size_t m = samples.front().size();
  Eigen::MatrixXd mat(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != m) throw ShapeError("feature vectors differ in length");
    for (std::size_t j = 0; j < m; ++j) mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i][j];
  }
  return from_samples(mat);
}

double inception_score(const std::vector<std::vector<double>>& predictions) {
  if (predictions.empty()) throw InvalidValueError("inception_score: no predictions");
  const std::size_t classes = predictions.front().size();
  if (classes == 0) throw InvalidValueError("inception_score: empty probability vector");
  std::vector<double> marginal(classes, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (p.size() != classes) throw ShapeError("inception_score: vectors differ in length");
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidValueError("inception_score: prediction " + std::to_string(i) + " has a negative or non-finite entry");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvalidValueError("inception_score: prediction " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
    // Shifted accumulation: exact when every prediction equals the first.
    for (std::size_t c = 0; c < classes; ++c) marginal[c] += p[c] - predictions.front()[c];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    marginal[c] = predictions.front()[c] + marginal[c] / static_cast<double>(predictions.size());
  }

  double kl_sum = 0.0;
  for (const auto& p : predictions) {
    double kl = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (p[c] > 0.0) kl += p[c] * (std::log(p[c]) - std::log(marginal[c]));
    }
    kl_sum += kl;
  }
  return std::exp(kl_sum / static_cast<double>(predictions.size()));
}

namespace {

// Symmetric PSD square root; negative eigenvalues are clamped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = eig.eigenvalues();
  const double worst = ev.minCoeff();
  if (worst < -1e-6) {
    log::warning(std::string("fid: ") + what + " has eigenvalue " + std::to_string(worst) + ", clamped to 0");
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const DistributionStats& real, const DistributionStats& fake) {
  if (real.dim() != fake.dim() || real.covariance.rows() != real.dim() || fake.covariance.rows() != fake.dim()) {
    throw ShapeError("fid: dimension mismatch " + std::to_string(real.dim()) + " vs " + std::to_string(fake.dim()));
  }
  const double mean_term = (real.mean - fake.mean).squaredNorm();
  // Tr((Sr Sf)^1/2) = Tr((Sr^1/2 Sf Sr^1/2)^1/2)
  const Eigen::MatrixXd root_r = psd_sqrt(real.covariance, "real covariance");
  const Eigen::MatrixXd inner = root_r * fake.covariance * root_r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double ev = eig.eigenvalues()(i);
    if (ev < -1e-6) log::warning("fid: product has eigenvalue " + std::to_string(ev) + ", clamped to 0");
    tr_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  const double value = mean_term + real.covariance.trace() + fake.covariance.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

RandomConvClassifier::RandomConvClassifier(std::uint64_t seed, int feature_dim, int classes)
    : seed_(seed), feature_dim_(feature_dim), classes_(classes) {
  if (feature_dim < 1 || classes < 2) throw ConfigError("classifier needs feature_dim >= 1 and classes >= 2");
  std::mt19937_64 rng(seed ^ 0xc1a55f1e5ULL);
  const int widths[] = {16, 32, feature_dim};
  int in = 3;
  for (int out : widths) {
    const double bound = std::sqrt(6.0 / (9.0 * in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({3, 3, in, out});
    for (double& v : w.storage()) v = u(rng);
    weights_.push_back(std::move(w));
    biases_.emplace_back(Dims{out}, 0.0);
    in = out;
  }
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  head_.resize(classes, feature_dim);
  for (Eigen::Index i = 0; i < head_.size(); ++i) head_.data()[i] = 2.0 * g(rng);
  head_bias_ = Eigen::VectorXd::Zero(classes);
}

std::string RandomConvClassifier::id() const {
  std::ostringstream os;
  os << "random-conv:seed=" << seed_ << ":features=" << feature_dim_ << ":classes=" << classes_;
  return os.str();
}

std::vector<double> RandomConvClassifier::features(const Tensor& image) const {
  require_rank3(image, "classifier input");
  if (image.channels() != 3) throw ShapeError("classifier expects 3 channels, got " + image.shape_string());
  NoGradGuard no_grad;
  Var x = ops::add_scalar(constant(image), -0.5);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    x = ops::conv2d(x, constant(weights_[i]), constant(biases_[i]), {2, 1, 1});
    x = ops::relu(x);
  }
  const Tensor pooled = ops::global_avg_pool(x).value();
  return pooled.storage();
}

std::vector<double> RandomConvClassifier::logits_from_features(const std::vector<double>& f) const {
  // Standardized so the head sees unit-scale inputs whatever the image contrast.
  Eigen::VectorXd fv = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
  fv.array() -= fv.mean();
  fv /= std::sqrt(fv.squaredNorm() / static_cast<double>(fv.size())) + 1e-8;
  const Eigen::VectorXd logits = head_ * fv + head_bias_;
  return {logits.data(), logits.data() + logits.size()};
}

std::vector<double> RandomConvClassifier::probabilities(const Tensor& image) const {
  std::vector<double> z = logits_from_features(features(image));
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) sum += (v = std::exp(v - mx));
  for (double& v : z) v /= sum;
  return z;
}

std::unique_ptr<ClassifierPlugin> make_classifier(const std::string& id) {
  if (id == "random-conv") return std::make_unique<RandomConvClassifier>();
  const std::string prefix = "random-conv:seed=";
  if (id.rfind(prefix, 0) == 0) {
    std::string rest = id.substr(prefix.size());
    rest = rest.substr(0, rest.find(':'));
    try {
      std::size_t used = 0;
      const unsigned long long seed = std::stoull(rest, &used);
      if (used == rest.size()) return std::make_unique<RandomConvClassifier>(seed);
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown classifier backend '" + id + "' (expected random-conv[:seed=N])");
}

nlohmann::json EvalReport::to_json() const {
  return {{"is", is}, {"fid", fid}, {"n_samples", n_samples}, {"backend_id", backend_id}};
}

EvalReport evaluate_images(const std::vector<Tensor>& real, const std::vector<Tensor>& fake,
                           const ClassifierPlugin& backend) {
  if (real.empty() || fake.empty()) throw ConfigError("evaluation set is empty");
  std::vector<std::vector<double>> real_f, fake_f, probs;
  for (const auto& t : real) real_f.push_back(backend.features(t));
  for (const auto& t : fake) {
    fake_f.push_back(backend.features(t));
    probs.push_back(backend.probabilities(t));
  }
  EvalReport r;
  r.is = inception_score(probs);
  r.fid = fid(DistributionStats::from_vectors(real_f), DistributionStats::from_vectors(fake_f));
  r.n_samples = fake.size();
  r.backend_id = backend.id();
  return r;
}

EvalReport evaluate(const Model& model, const Dataset& test_set, const ClassifierPlugin& backend,
                    const Dataset* reference_set) {
  if (test_set.samples.empty()) throw ConfigError("evaluation set is empty");
  std::unique_ptr<EmbeddingPlugin> embedder;
  if (reference_set) {
    if (reference_set->samples.empty()) throw ConfigError("reference set is empty");
    embedder = make_embedder(reference_set->index.embedder_id());
  }
  std::vector<Tensor> real, fake;
  for (std::size_t i = 0; i < test_set.samples.size(); ++i) {
    const ImageSample& s = test_set.samples[i];
    std::optional<Tensor> ref;
    if (reference_set) {
      auto q = embedder->embed(s.pixels);
      normalize_embedding(q);
      const auto top = reference_set->index.rank(q, 1, s.id);
      if (!top.empty()) ref = right_half(reference_set->sample(top.front().id).pixels);
    } else if (test_set.index.contains(s.id) && !test_set.index.neighbors(s.id).empty()) {
      ref = right_half(test_set.sample(test_set.index.neighbors(s.id).front().id).pixels);
    }
    const OutpaintResult out = outpaint(model, left_half(s.pixels), right_half(test_set.sketches[i].mask), ref);
    real.push_back(s.pixels);
    fake.push_back(out.composite);
  }
  return evaluate_images(real, fake, backend);
}

}  // namespace rego
