#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "rego/tensor.hpp"

namespace rego {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. Leaves (parameters, constants) have
/// no inputs; interior nodes carry a closure that pushes `grad` into the
/// gradients of `inputs`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor::zeros_like(value);
    return grad;
  }
  bool has_grad() const noexcept { return grad.size() == value.size() && !value.empty(); }
};

/// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers, checkpoint loading and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Dims& dims() const { return node_->value.dims(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  /// Accumulated gradient; zeros if backward never reached this node.
  Tensor grad() const;
  void zero_grad();
  double item() const { return node_->value.item(); }
  const NodePtr& node() const noexcept { return node_; }

 private:
  NodePtr node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Reverse sweep from a scalar root. Gradients accumulate into leaves.
void backward(const Var& root);

bool grad_enabled() noexcept;

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// While alive, every rectifier or hinge evaluated on this thread folds the
/// sign pattern of its input into a running hash. Two evaluations with equal
/// fingerprints took the same branch at every kink.
class KinkFingerprint {
 public:
  KinkFingerprint();
  ~KinkFingerprint();
  KinkFingerprint(const KinkFingerprint&) = delete;
  KinkFingerprint& operator=(const KinkFingerprint&) = delete;

  std::uint64_t value() const noexcept { return hash_; }
  void reset() noexcept { hash_ = 1469598103934665603ULL; }
  void mix(std::uint64_t bits) noexcept;

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  KinkFingerprint* previous_;
};

/// Hook for op implementations: records a branch decision if a fingerprint is active.
void record_kink(bool positive) noexcept;

/// Builds a result node whose backward is `fn`. Recording is skipped when
/// grad mode is off or no input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn);

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var abs(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean absolute difference.
Var l1(const Var& a, const Var& b);
Var dot(const Var& a, const Var& b);

Var flip_width(const Var& a);
Var concat_channels(const Var& a, const Var& b);
Var concat_width(const Var& a, const Var& b);
Var slice_width(const Var& a, int start, int len);
/// Reinterprets the element buffer under new dims.
Var reshape(const Var& a, Dims dims);
/// Gradient barrier: same value, no tape link.
Var detach(const Var& a);

// conv_ops.cpp

struct ConvGeometry {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
};

/// x: HxWxCin, weight: KHxKWxCinxCout, bias: Cout (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry geom);
Var upsample_nearest2x(const Var& x);
/// PyTorch-style adaptive average pooling to out_h x out_w bins.
Var adaptive_avg_pool(const Var& x, int out_h, int out_w);
Var global_avg_pool(const Var& x);

enum class NormMode {
  Train,   ///< per-channel batch statistics; running averages updated
  Frozen,  ///< running statistics only; deterministic affine map
};

struct BatchNormState {
  Var gamma;
  Var beta;
  Var running_mean;  // non-trainable
  Var running_var;   // non-trainable
  double momentum = 0.1;
  double eps = 1e-5;
};

Var batch_norm(const Var& x, const BatchNormState& state, NormMode mode);

}  // namespace ops
}  // namespace rego
