#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mergesfl {

using Label = std::int32_t;
using Labels = std::vector<Label>;

// Dense row-major array of doubles. Rank-2 tensors are the common case
// (rows = samples); rank-1 tensors hold biases.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors. Throw ShapeError on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Throws NumericError naming `where` if any entry is NaN or Inf.
void require_finite(const Tensor& t, const char* where);

// a[n x k] * b[k x m]
Tensor matmul(const Tensor& a, const Tensor& b);
// a^T[k x n]^T * b: a is [n x k], b is [n x m], result [k x m]
Tensor matmul_at_b(const Tensor& a, const Tensor& b);
// a[n x k] * b^T where b is [m x k], result [n x m]
Tensor matmul_a_bt(const Tensor& a, const Tensor& b);

// Adds a rank-1 vector of length cols() to every row, in place.
void add_row_vector(Tensor& m, const Tensor& v);
// Column sums of a rank-2 tensor as a rank-1 tensor.
Tensor column_sums(const Tensor& m);

// Row-wise concatenation; all parts must share the column count.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& m, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices);

// Largest absolute entry-wise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);

}  // namespace mergesfl
