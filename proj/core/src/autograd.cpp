#include "rego/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "rego/errors.hpp"

namespace rego {
namespace {

thread_local bool t_grad_enabled = true;
thread_local KinkFingerprint* t_fingerprint = nullptr;

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                     b.value().shape_string());
  }
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Tensor::zeros_like(node_->value);
}

void Var::zero_grad() {
  if (node_ && node_->has_grad()) node_->grad.fill(0.0);
}

Var constant(Tensor value) { return Var(std::move(value), false); }
Var parameter(Tensor value) { return Var(std::move(value), true); }

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

KinkFingerprint::KinkFingerprint() : previous_(t_fingerprint) { t_fingerprint = this; }
KinkFingerprint::~KinkFingerprint() { t_fingerprint = previous_; }

void KinkFingerprint::mix(std::uint64_t bits) noexcept {
  hash_ ^= bits;
  hash_ *= 1099511628211ULL;
}

void record_kink(bool positive) noexcept {
  if (t_fingerprint) t_fingerprint->mix(positive ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL);
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined()) throw ContractError("backward: undefined root");
  if (root.value().size() != 1) throw ShapeError("backward: root must be scalar, got " + root.value().shape_string());
  if (!root.requires_grad()) return;

  // iterative post-order DFS gives a topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

namespace ops {

namespace {

void accumulate(const NodePtr& target, const Tensor& delta) {
  if (!target->requires_grad) return;
  Tensor& g = target->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename F>
void accumulate_with(const NodePtr& target, F f) {
  if (!target->requires_grad) return;
  Tensor& g = target->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += f(i);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    accumulate(self.inputs[0], self.grad);
    accumulate(self.inputs[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    accumulate(self.inputs[0], self.grad);
    accumulate_with(self.inputs[1], [&](std::size_t i) { return -self.grad[i]; });
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    accumulate_with(self.inputs[0], [&](std::size_t i) { return self.grad[i] * bv[i]; });
    accumulate_with(self.inputs[1], [&](std::size_t i) { return self.grad[i] * av[i]; });
  });
}

Var scale(const Var& a, double s) {
  return make_result(map_unary(a.value(), [s](double v) { return v * s; }), {a}, [s](Node& self) {
    accumulate_with(self.inputs[0], [&](std::size_t i) { return self.grad[i] * s; });
  });
}

Var add_scalar(const Var& a, double s) {
  return make_result(map_unary(a.value(), [s](double v) { return v + s; }), {a},
                     [](Node& self) { accumulate(self.inputs[0], self.grad); });
}

Var sigmoid(const Var& a) {
  auto out = map_unary(a.value(), [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return make_result(std::move(out), {a}, [](Node& self) {
    accumulate_with(self.inputs[0], [&](std::size_t i) {
      const double s = self.value[i];
      return self.grad[i] * s * (1.0 - s);
    });
  });
}

Var tanh(const Var& a) {
  return make_result(map_unary(a.value(), [](double v) { return std::tanh(v); }), {a}, [](Node& self) {
    accumulate_with(self.inputs[0], [&](std::size_t i) {
      const double t = self.value[i];
      return self.grad[i] * (1.0 - t * t);
    });
  });
}

Var relu(const Var& a) {
  auto out = map_unary(a.value(), [](double v) {
    record_kink(v > 0);
    return v > 0 ? v : 0.0;
  });
  return make_result(std::move(out), {a}, [](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    accumulate_with(self.inputs[0], [&](std::size_t i) { return x[i] > 0 ? self.grad[i] : 0.0; });
  });
}

Var leaky_relu(const Var& a, double slope) {
  auto out = map_unary(a.value(), [slope](double v) {
    record_kink(v > 0);
    return v > 0 ? v : slope * v;
  });
  return make_result(std::move(out), {a}, [slope](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    accumulate_with(self.inputs[0], [&](std::size_t i) { return x[i] > 0 ? self.grad[i] : slope * self.grad[i]; });
  });
}

Var abs(const Var& a) {
  auto out = map_unary(a.value(), [](double v) {
    record_kink(v > 0);
    return std::abs(v);
  });
  return make_result(std::move(out), {a}, [](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    accumulate_with(self.inputs[0], [&](std::size_t i) {
      return x[i] > 0 ? self.grad[i] : (x[i] < 0 ? -self.grad[i] : 0.0);
    });
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    const double g = self.grad[0];
    accumulate_with(self.inputs[0], [g](std::size_t) { return g; });
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var l1(const Var& a, const Var& b) { return mean(abs(sub(a, b))); }

Var dot(const Var& a, const Var& b) {
  require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  return make_result(Tensor::scalar(s), {a, b}, [](Node& self) {
    const double g = self.grad[0];
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    accumulate_with(self.inputs[0], [&](std::size_t i) { return g * bv[i]; });
    accumulate_with(self.inputs[1], [&](std::size_t i) { return g * av[i]; });
  });
}

Var flip_width(const Var& a) {
  return make_result(rego::flip_width(a.value()), {a},
                     [](Node& self) { accumulate(self.inputs[0], rego::flip_width(self.grad)); });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank3(a.value(), "concat_channels");
  require_rank3(b.value(), "concat_channels");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.height() != bv.height() || av.width() != bv.width()) {
    throw ShapeError("concat_channels: spatial mismatch " + av.shape_string() + " vs " + bv.shape_string());
  }
  const int h = av.height(), w = av.width(), ca = av.channels(), cb = bv.channels();
  Tensor out({h, w, ca + cb});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::memcpy(&out.at(y, x, 0), av.data() + av.offset(y, x, 0), sizeof(double) * ca);
      std::memcpy(&out.at(y, x, ca), bv.data() + bv.offset(y, x, 0), sizeof(double) * cb);
    }
  return make_result(std::move(out), {a, b}, [h, w, ca, cb](Node& self) {
    for (int part = 0; part < 2; ++part) {
      const NodePtr& in = self.inputs[part];
      if (!in->requires_grad) continue;
      Tensor& g = in->grad_buffer();
      const int cc = part == 0 ? ca : cb;
      const int off = part == 0 ? 0 : ca;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < cc; ++c) g.at(y, x, c) += self.grad.at(y, x, off + c);
    }
  });
}

Var concat_width(const Var& a, const Var& b) {
  const int wl = a.value().rank() == 3 ? a.value().width() : 0;
  return make_result(rego::concat_width(a.value(), b.value()), {a, b}, [wl](Node& self) {
    const int wr = self.value.width() - wl;
    accumulate(self.inputs[0], rego::slice_width(self.grad, 0, wl));
    accumulate(self.inputs[1], rego::slice_width(self.grad, wl, wr));
  });
}

Var slice_width(const Var& a, int start, int len) {
  return make_result(rego::slice_width(a.value(), start, len), {a}, [start, len](Node& self) {
    const NodePtr& in = self.inputs[0];
    if (!in->requires_grad) return;
    Tensor& g = in->grad_buffer();
    const int h = g.height(), c = g.channels();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < len; ++x)
        for (int k = 0; k < c; ++k) g.at(y, start + x, k) += self.grad.at(y, x, k);
  });
}

Var reshape(const Var& a, Dims dims) {
  Tensor out(std::move(dims), a.value().storage());
  return make_result(std::move(out), {a}, [](Node& self) { accumulate(self.inputs[0], self.grad); });
}

Var detach(const Var& a) { return constant(a.value()); }

}  // namespace ops
}  // namespace rego
