#include "rego/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "rego/errors.hpp"

namespace rego {
namespace {

std::size_t element_count(const Dims& dims) {
  std::size_t n = 1;
  for (int d : dims) {
    if (d < 0) throw ShapeError("negative tensor dimension in " + to_string(dims));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

Tensor::Tensor(Dims dims, std::vector<double> values) : dims_(std::move(dims)), data_(std::move(values)) {
  if (data_.size() != element_count(dims_)) {
    throw ShapeError("tensor value count " + std::to_string(data_.size()) + " does not match dims " +
                     to_string(dims_));
  }
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
  return data_[0];
}

void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected HxWxC tensor, got " + t.shape_string());
}

Tensor slice_width(const Tensor& t, int start, int len) {
  require_rank3(t, "slice_width");
  if (start < 0 || len < 0 || start + len > t.width()) {
    throw ShapeError("slice_width: columns [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for " + t.shape_string());
  }
  const int h = t.height(), c = t.channels();
  Tensor out({h, len, c});
  for (int y = 0; y < h; ++y) {
    std::memcpy(&out.at(y, 0, 0), t.data() + t.offset(y, start, 0), sizeof(double) * static_cast<std::size_t>(len) * c);
  }
  return out;
}

Tensor left_half(const Tensor& t) {
  require_rank3(t, "left_half");
  if (t.width() % 2 != 0) throw ShapeError("left_half: odd width " + t.shape_string());
  return slice_width(t, 0, t.width() / 2);
}

Tensor right_half(const Tensor& t) {
  require_rank3(t, "right_half");
  if (t.width() % 2 != 0) throw ShapeError("right_half: odd width " + t.shape_string());
  return slice_width(t, t.width() / 2, t.width() / 2);
}

Tensor concat_width(const Tensor& left, const Tensor& right) {
  require_rank3(left, "concat_width");
  require_rank3(right, "concat_width");
  if (left.height() != right.height() || left.channels() != right.channels()) {
    throw ShapeError("concat_width: " + left.shape_string() + " vs " + right.shape_string());
  }
  const int h = left.height(), wl = left.width(), wr = right.width(), c = left.channels();
  Tensor out({h, wl + wr, c});
  for (int y = 0; y < h; ++y) {
    std::memcpy(&out.at(y, 0, 0), left.data() + left.offset(y, 0, 0), sizeof(double) * static_cast<std::size_t>(wl) * c);
    std::memcpy(&out.at(y, wl, 0), right.data() + right.offset(y, 0, 0), sizeof(double) * static_cast<std::size_t>(wr) * c);
  }
  return out;
}

Tensor flip_width(const Tensor& t) {
  require_rank3(t, "flip_width");
  const int h = t.height(), w = t.width(), c = t.channels();
  Tensor out(t.dims());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      std::memcpy(&out.at(y, w - 1 - x, 0), t.data() + t.offset(y, x, 0), sizeof(double) * static_cast<std::size_t>(c));
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace rego
