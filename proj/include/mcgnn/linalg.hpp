#pragma once

// Dense row-major kernels used by the model and its gradients. Everything is
// double precision and every reduction runs in a fixed order, so results are
// reproducible bit-for-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcgnn/error.hpp"

namespace mcgnn {

using Vector = std::vector<double>;

inline std::string shape_str(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(rows_, cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// Column vector holding `v`.
  static Matrix column(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::string shape() const { return shape_str(rows_, cols_); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": length " + std::to_string(got) +
                         " does not match expected " + std::to_string(want));
  }
}

inline constexpr std::size_t kLanes = 8;

// Sum of eight partial sums as a fixed binary tree.
inline double reduce_lanes(const double* s) {
  return ((s[0] + s[4]) + (s[2] + s[6])) + ((s[1] + s[5]) + (s[3] + s[7]));
}

// Dot product whose partial sums run in lanes j % 8; the tail goes to lane 0.
inline double dot_lanes(const double* __restrict a, const double* __restrict x,
                        std::size_t n) {
  double s[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) s[l] += a[j + l] * x[j + l];
  }
  for (; j < n; ++j) s[0] += a[j] * x[j];
  return reduce_lanes(s);
}

}  // namespace detail

/// y += m * x.
inline void matvec_add(const Matrix& m, std::span<const double> x,
                       std::span<double> y) {
  if (m.cols() != x.size() || m.rows() != y.size()) {
    throw DimensionError("matvec: matrix " + m.shape() + " vs vector " +
                         shape_str(x.size(), 1) + " -> " + shape_str(y.size(), 1));
  }
  const std::size_t cols = m.cols();
  const double* a = m.values().data();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    y[i] += detail::dot_lanes(a + i * cols, x.data(), cols);
  }
}

inline Vector matvec(const Matrix& m, std::span<const double> v) {
  if (m.cols() != v.size()) {
    throw DimensionError("matvec: matrix " + m.shape() + " cannot multiply vector " +
                         shape_str(v.size(), 1));
  }
  Vector out(m.rows(), 0.0);
  matvec_add(m, v, out);
  return out;
}

/// dx += m^T * dy.
inline void matvec_transposed_add(const Matrix& m, std::span<const double> dy,
                                  std::span<double> dx) {
  if (m.rows() != dy.size() || m.cols() != dx.size()) {
    throw DimensionError("matvec_transposed: matrix " + m.shape() + " vs " +
                         shape_str(dy.size(), 1) + " -> " + shape_str(dx.size(), 1));
  }
  const std::size_t cols = m.cols();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    const double* r = m.values().data() + i * cols;
    double* out = dx.data();
    for (std::size_t j = 0; j < cols; ++j) out[j] += g * r[j];
  }
}

/// acc += dy * x^T.
inline void outer_add(Matrix& acc, std::span<const double> dy,
                      std::span<const double> x) {
  if (acc.rows() != dy.size() || acc.cols() != x.size()) {
    throw DimensionError("outer_add: accumulator " + acc.shape() + " vs " +
                         shape_str(dy.size(), 1) + " x " + shape_str(1, x.size()));
  }
  const std::size_t cols = acc.cols();
  for (std::size_t i = 0; i < acc.rows(); ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    double* r = acc.values().data() + i * cols;
    const double* xv = x.data();
    for (std::size_t j = 0; j < cols; ++j) r[j] += g * xv[j];
  }
}

inline Vector relu(std::span<const double> v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

inline double sigmoid(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector sigmoid(std::span<const double> v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = sigmoid(v[i]);
  return out;
}

inline Vector tanh(std::span<const double> v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
  return out;
}

/// Softmax with the maximum logit subtracted first.
inline void softmax_stable_into(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) throw DimensionError("softmax_stable: empty logits");
  detail::require_len(out.size(), logits.size(), "softmax_stable output");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& p : out) p /= total;
}

inline Vector softmax_stable(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax_stable: empty logits");
  Vector out(logits.size());
  softmax_stable_into(logits, out);
  return out;
}

inline Vector hadamard(std::span<const double> a, std::span<const double> b) {
  detail::require_len(b.size(), a.size(), "hadamard");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Vector add(std::span<const double> a, std::span<const double> b) {
  detail::require_len(b.size(), a.size(), "add");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace mcgnn
