#include "rego/nn.hpp"

#include <cmath>

#include "rego/errors.hpp"

namespace rego {

Var ParamStore::add_parameter(const std::string& name, Tensor init) {
  if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Var v = parameter(std::move(init));
  entries_.emplace(name, Entry{v, true});
  return v;
}

Var ParamStore::add_buffer(const std::string& name, Tensor init) {
  if (entries_.count(name)) throw ConfigError("duplicate buffer name: " + name);
  Var v = constant(std::move(init));
  entries_.emplace(name, Entry{v, false});
  return v;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw NotFoundError("no tensor named " + name);
  return it->second.var;
}

bool ParamStore::is_trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw NotFoundError("no tensor named " + name);
  return it->second.trainable;
}

std::vector<Var> ParamStore::parameters(const std::vector<std::string>& prefixes) const {
  std::vector<Var> out;
  for (const auto& [name, entry] : entries_) {
    if (!entry.trainable) continue;
    bool match = prefixes.empty();
    for (const auto& p : prefixes) match = match || name.rfind(p, 0) == 0;
    if (match) out.push_back(entry.var);
  }
  return out;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& kv : entries_) out.push_back(kv.first);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& kv : entries_)
    if (kv.second.trainable) n += kv.second.var.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& kv : entries_) kv.second.var.zero_grad();
}

void ParamStore::load(const std::map<std::string, Tensor>& tensors) {
  for (auto& [name, entry] : entries_) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw NotFoundError("checkpoint is missing tensor " + name);
    if (it->second.dims() != entry.var.dims()) {
      throw ShapeError("tensor " + name + ": expected " + to_string(entry.var.dims()) + ", found " +
                       it->second.shape_string());
    }
    entry.var.mutable_value() = it->second;
  }
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, entry] : entries_) out.emplace(name, entry.var.value());
  return out;
}

Tensor init_tensor(const Dims& dims, Init init, int fan_in, Rng& rng) {
  Tensor t(dims);
  if (init == Init::Zero) return t;
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, ConvSpec spec, Rng& rng) : spec_(spec) {
  if (spec.kernel_h < 1 || spec.kernel_w < 1 || spec.in_channels < 1 || spec.out_channels < 1) {
    throw ConfigError("conv " + name + ": non-positive dimension");
  }
  const int fan_in = spec.kernel_h * spec.kernel_w * spec.in_channels;
  weight_ = store.add_parameter(
      name + ".weight",
      init_tensor({spec.kernel_h, spec.kernel_w, spec.in_channels, spec.out_channels}, spec.init, fan_in, rng));
  if (spec.bias) bias_ = store.add_parameter(name + ".bias", Tensor({spec.out_channels}));
}

Var Conv2d::operator()(const Var& x) const {
  ops::ConvGeometry g{spec_.stride, spec_.kernel_h / 2, spec_.kernel_w / 2};
  return ops::conv2d(x, weight_, bias_, g);
}

BatchNorm::BatchNorm(ParamStore& store, const std::string& name, int channels) {
  state_.gamma = store.add_parameter(name + ".gamma", Tensor({channels}, 1.0));
  state_.beta = store.add_parameter(name + ".beta", Tensor({channels}, 0.0));
  state_.running_mean = store.add_buffer(name + ".running_mean", Tensor({channels}, 0.0));
  state_.running_var = store.add_buffer(name + ".running_var", Tensor({channels}, 1.0));
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros_like(p.value()));
    v_.push_back(Tensor::zeros_like(p.value()));
  }
}

void Adam::step(double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.node()->has_grad()) continue;
    const Tensor& g = p.node()->grad;
    Tensor& w = p.mutable_value();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * grad_scale;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace rego
