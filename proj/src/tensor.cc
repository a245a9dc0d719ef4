#include "mergesfl/tensor.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mergesfl/common.h"

namespace mergesfl {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    n *= d;
  }
  return n;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("from_rows: no rows");
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape_[1];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + where);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aip * b(p, j);
    }
  }
  return out;
}

Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_at_b");
  require_rank2(b, "matmul_at_b");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != n) {
    throw ShapeError("matmul_at_b: " + shape_string(a.shape()) + "^T * " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(k, m);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      const double ari = a(r, i);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += ari * b(r, j);
    }
  }
  return out;
}

Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_a_bt");
  require_rank2(b, "matmul_a_bt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_a_bt: " + shape_string(a.shape()) + " * " + shape_string(b.shape()) + "^T");
  }
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
      out(i, j) = acc;
    }
  }
  return out;
}

void add_row_vector(Tensor& m, const Tensor& v) {
  require_rank2(m, "add_row_vector");
  if (v.rank() != 1 || v.size() != m.cols()) {
    throw ShapeError("add_row_vector: " + shape_string(v.shape()) + " onto " + shape_string(m.shape()));
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += v[j];
  }
}

Tensor column_sums(const Tensor& m) {
  require_rank2(m, "column_sums");
  Tensor out({m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Tensor& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor({rows, cols}, std::move(data));
}

Tensor slice_rows(const Tensor& m, std::size_t start, std::size_t count) {
  if (count == 0 || start + count > m.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(m.shape()));
  }
  const std::size_t c = m.cols();
  auto first = m.data().begin() + static_cast<std::ptrdiff_t>(start * c);
  return Tensor({count, c}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * c)));
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  const std::size_t c = m.cols();
  std::vector<double> data;
  data.reserve(indices.size() * c);
  for (std::size_t idx : indices) {
    if (idx >= m.rows()) throw ShapeError("gather_rows: index out of range");
    auto r = m.row(idx);
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({indices.size(), c}, std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double max_abs(const Tensor& a) {
  double worst = 0.0;
  for (double v : a.data()) worst = std::max(worst, std::abs(v));
  return worst;
}

}  // namespace mergesfl
