// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mcmil::diff {

/// Dense row-major array of doubles. Graph operations work on rank-2
/// tensors; higher ranks are only used as storage (e.g. C x S x S tiles).
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols); }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::span<const double> values);
  static Tensor column(std::span<const double> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Rows/cols of a rank-2 tensor.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 0; }
  std::size_t cols() const noexcept { return shape_.size() == 2 ? shape_[1] : 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  std::string shape_string() const;

  /// Copy with a new shape of equal element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  /// Bitwise value comparison (shape and every element).
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Plain (non-differentiable) kernels shared by the graph and by callers that
// only need forward values.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);

double max_abs_diff(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);

}  // namespace mcmil::diff
