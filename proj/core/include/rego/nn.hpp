#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rego/autograd.hpp"

namespace rego {

using Rng = std::mt19937_64;

/// Named parameter and buffer registry. Keys are dotted paths such as
/// `acs.0.seam.grb1.conv7x1.weight`; iteration order is lexicographic.
class ParamStore {
 public:
  /// Registers a trainable tensor. Throws ConfigError on duplicate names.
  Var add_parameter(const std::string& name, Tensor init);
  /// Registers a non-trainable buffer (e.g. running statistics).
  Var add_buffer(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Var& get(const std::string& name) const;
  bool is_trainable(const std::string& name) const;

  /// Trainable parameters whose name starts with one of `prefixes` (all if empty).
  std::vector<Var> parameters(const std::vector<std::string>& prefixes = {}) const;
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Copies values by name; every registered tensor must be present with matching dims.
  void load(const std::map<std::string, Tensor>& tensors);
  std::map<std::string, Tensor> snapshot() const;

 private:
  struct Entry {
    Var var;
    bool trainable;
  };
  std::map<std::string, Entry> entries_;
};

enum class Init {
  FanInUniform,  ///< U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  Zero,
};

Tensor init_tensor(const Dims& dims, Init init, int fan_in, Rng& rng);

struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  bool bias = true;
  Init init = Init::FanInUniform;
};

/// Convolution layer bound to tensors `<name>.weight` / `<name>.bias` in a
/// store. Padding keeps the spatial size at stride 1 (odd kernels).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, ConvSpec spec, Rng& rng);

  Var operator()(const Var& x) const;
  const ConvSpec& spec() const noexcept { return spec_; }
  const Var& weight() const noexcept { return weight_; }
  const Var& bias() const noexcept { return bias_; }

 private:
  ConvSpec spec_;
  Var weight_;
  Var bias_;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore& store, const std::string& name, int channels);
  Var operator()(const Var& x, ops::NormMode mode) const { return ops::batch_norm(x, state_, mode); }

 private:
  ops::BatchNormState state_;
};

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);
  /// Applies one update using accumulated gradients scaled by `grad_scale`.
  void step(double grad_scale = 1.0);
  void zero_grad();
  long steps() const noexcept { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace rego
