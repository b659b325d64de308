#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rego {

using Dims = std::vector<int>;

std::string to_string(const Dims& dims);

/// Dense row-major grid of doubles. Rank-3 tensors are laid out
/// height x width x channels with channels fastest (HWC).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Dims& dims() const noexcept { return dims_; }
  int rank() const noexcept { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // rank-3 (HWC) views
  int height() const { return dim(0); }
  int width() const { return dim(1); }
  int channels() const { return dim(2); }
  std::size_t offset(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * dims_[1] + x) * dims_[2] + c;
  }
  double& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * dims_[1] + x) * dims_[2] + c];
  }
  double at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * dims_[1] + x) * dims_[2] + c];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }
  std::string shape_string() const { return to_string(dims_); }
  bool all_finite() const noexcept;
  void fill(double v);
  double item() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

using FeatureMap = Tensor;

/// Throws ShapeError unless `t` is rank 3.
void require_rank3(const Tensor& t, const char* what);

/// Column range [start, start + len) of an HWC tensor.
Tensor slice_width(const Tensor& t, int start, int len);
Tensor left_half(const Tensor& t);
Tensor right_half(const Tensor& t);
Tensor concat_width(const Tensor& left, const Tensor& right);
/// Mirror along the width axis.
Tensor flip_width(const Tensor& t);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace rego
