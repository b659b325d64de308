#include "rego/styleloss.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "rego/errors.hpp"
#include "rego/logging.hpp"

namespace rego {

using nlohmann::json;

void StyleConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("style.alpha must be a finite value >= 0");
  if (layer_weights.empty()) throw ConfigError("style.layer_weights must not be empty");
  for (double w : layer_weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("style.layer_weights entries must be >= 0");
}

json StyleConfig::to_json() const {
  return {{"alpha", alpha}, {"layer_weights", layer_weights}, {"extractor", extractor}};
}

StyleConfig StyleConfig::from_json(const json& j) {
  StyleConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.layer_weights = j.at("layer_weights").get<std::vector<double>>();
  c.extractor = j.at("extractor").get<std::string>();
  c.validate();
  return c;
}

RandomPyramidExtractor::RandomPyramidExtractor(std::uint64_t seed, std::vector<int> widths)
    : seed_(seed), widths_(std::move(widths)) {
  if (widths_.empty()) throw ConfigError("feature extractor needs at least one stage");
  std::mt19937_64 rng(seed ^ 0xfea7u);
  int in = 3;
  for (int out : widths_) {
    const double bound = std::sqrt(6.0 / (9.0 * in));  // He-uniform keeps activations alive through ReLUs
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w({3, 3, in, out});
    for (double& v : w.values()) v = dist(rng);
    Tensor b({out});
    for (double& v : b.values()) v = 0.1 * dist(rng);
    weights_.push_back(constant(std::move(w)));
    biases_.push_back(constant(std::move(b)));
    in = out;
  }
}

std::vector<Var> RandomPyramidExtractor::activations(const Var& image) const {
  require_rank3(image.value(), "feature extractor");
  if (image.value().channels() != 3) throw ShapeError("feature extractor expects RGB, got " + image.value().shape_string());
  std::vector<Var> out;
  Var x = ops::add_scalar(image, -0.5);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    x = ops::relu(ops::conv2d(x, weights_[i], biases_[i], {2, 1, 1}));
    out.push_back(x);
  }
  return out;
}

std::string RandomPyramidExtractor::id() const {
  std::ostringstream os;
  os << "random-pyramid:seed=" << seed_;
  return os.str();
}

std::unique_ptr<FeaturePlugin> make_feature_extractor(const std::string& id) {
  unsigned long long seed = 0;
  if (std::sscanf(id.c_str(), "random-pyramid:seed=%llu", &seed) == 1) {
    return std::make_unique<RandomPyramidExtractor>(seed);
  }
  throw ConfigError("unknown style extractor: " + id);
}

GramStyle gram_matrix(const Var& feat, int layer) {
  const Tensor& f = feat.value();
  require_rank3(f, "gram_matrix");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const int n = f.channels();
  const int positions = f.height() * f.width();
  const double inv = 1.0 / positions;
  Eigen::Map<const RowMat> x(f.data(), positions, n);
  Tensor out({n, n});
  Eigen::Map<RowMat> r(out.data(), n, n);
  r.noalias() = x.transpose() * x * inv;
  Var m = make_result(std::move(out), {feat}, [n, positions, inv](Node& self) {
    const NodePtr& in = self.inputs[0];
    if (!in->requires_grad) return;
    Eigen::Map<const RowMat> g(self.grad.data(), n, n);
    Eigen::Map<const RowMat> xv(in->value.data(), positions, n);
    Eigen::Map<RowMat> gx(in->grad_buffer().data(), positions, n);
    gx.noalias() += xv * (g + g.transpose()) * inv;
  });
  return {m, layer};
}

Var style_similarity(const GramStyle& a, const GramStyle& b, bool* degenerate) {
  const Tensor& av = a.matrix.value();
  const Tensor& bv = b.matrix.value();
  if (!av.same_shape(bv)) throw ShapeError("style_similarity: " + av.shape_string() + " vs " + bv.shape_string());
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    log::warning("style_similarity: zero-norm Gram matrix at layer " + std::to_string(a.layer) +
                 "; similarity set to 0");
    return make_result(Tensor::scalar(0.0), {a.matrix, b.matrix}, [](Node&) {});
  }
  const double s = dot / (na * nb);
  return make_result(Tensor::scalar(s), {a.matrix, b.matrix}, [s, na, nb](Node& self) {
    const double g = self.grad[0];
    const Tensor& x = self.inputs[0]->value;
    const Tensor& y = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      Tensor& gx = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * (y[i] / (na * nb) - s * x[i] / (na * na));
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gy = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < y.size(); ++i) gy[i] += g * (x[i] / (na * nb) - s * y[i] / (nb * nb));
    }
  });
}

Var style_rank_layer(const GramStyle& gen, const GramStyle& left, const GramStyle& ref, double alpha) {
  const Var pos = style_similarity(gen, left);
  const Var neg = style_similarity(gen, ref);
  return ops::relu(ops::add_scalar(ops::sub(neg, pos), alpha));
}

StyleLoss style_rank_total(const Var& gen_right, const Var& left, const Var& ref, const FeaturePlugin& extractor,
                           const StyleConfig& cfg) {
  cfg.validate();
  if (extractor.layer_count() != static_cast<int>(cfg.layer_weights.size())) {
    throw ConfigError("style extractor " + extractor.id() + " yields " + std::to_string(extractor.layer_count()) +
                      " layers but " + std::to_string(cfg.layer_weights.size()) + " weights are configured");
  }
  const Tensor& g = gen_right.value();
  if (!g.same_shape(left.value()) || !g.same_shape(ref.value())) {
    throw ShapeError("style_rank_total: image shapes " + g.shape_string() + ", " + left.value().shape_string() +
                     ", " + ref.value().shape_string());
  }
  const auto fg = extractor.activations(gen_right);
  const auto fl = extractor.activations(left);
  const auto fr = extractor.activations(ref);

  StyleLoss out;
  Var total = constant(Tensor::scalar(0.0));
  for (std::size_t d = 0; d < fg.size(); ++d) {
    const int layer = static_cast<int>(d);
    const GramStyle rg = gram_matrix(fg[d], layer);
    const GramStyle lg = gram_matrix(fl[d], layer);
    const GramStyle gg = gram_matrix(fr[d], layer);
    bool degenerate = false;
    const Var pos = style_similarity(rg, lg, &degenerate);
    const Var neg = style_similarity(rg, gg, &degenerate);
    const Var loss = ops::relu(ops::add_scalar(ops::sub(neg, pos), cfg.alpha));
    out.degenerate = out.degenerate || degenerate;
    out.layer_losses.push_back(loss.item());
    if (loss.item() > 0.0) ++out.active_layers;
    total = ops::add(total, ops::scale(loss, cfg.layer_weights[d]));
  }
  out.total = total;
  return out;
}

}  // namespace rego
