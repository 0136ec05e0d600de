#pragma once

// Dense row-major matrices in double precision and the handful of
// differentiable primitives the model is built from. Every op here is a pure
// function of its inputs; backward functions take the forward input (or
// output, where cheaper) plus the upstream gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "spsmvg/errors.hpp"

namespace spsmvg {

class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(rows_, cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto &r : rows) {
      if (r.size() != cols_)
        throw DimensionError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      m(i, i) = 1.0;
    return m;
  }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }
  std::string shape() const { return shape_string(rows_, cols_); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Matrix &o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> &data() { return data_; }
  const std::vector<double> &data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix &operator+=(const Matrix &o) {
    require_same_shape(*this, o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i)
      data_[i] += o.data_[i];
    return *this;
  }
  Matrix &operator*=(double s) {
    for (auto &v : data_)
      v *= s;
    return *this;
  }

  friend bool operator==(const Matrix &, const Matrix &) = default;

  static void require_same_shape(const Matrix &a, const Matrix &b, const char *what) {
    if (!a.same_shape(b))
      throw DimensionError(std::string(what) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix &b) { return a += b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }

/// A trainable tensor with its gradient accumulator. Shapes never diverge.
struct ParamTensor {
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  explicit ParamTensor(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
  ParamTensor(std::size_t rows, std::size_t cols) : value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad.fill(0.0); }
};

inline Matrix matmul(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: shape mismatch " + a.shape() + " x " + b.shape());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0)
        continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j)
        orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a * b^T without materializing the transpose.
inline Matrix matmul_nt(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: shape mismatch " + a.shape() + " x " + b.shape() + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

// a^T * b
inline Matrix matmul_tn(const Matrix &a, const Matrix &b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: shape mismatch " + a.shape() + "^T x " + b.shape());
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0)
        continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j)
        orow[j] += aki * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix &m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      t(j, i) = m(i, j);
  return t;
}

inline Matrix hadamard(const Matrix &a, const Matrix &b) {
  Matrix::require_same_shape(a, b, "hadamard");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] *= b[i];
  return out;
}

inline Matrix relu(const Matrix &m) {
  Matrix out = m;
  for (auto &v : out.data())
    v = v > 0.0 ? v : 0.0;
  return out;
}

/// Gradient flows where the forward input was strictly positive; the subgradient at 0 is 0.
inline Matrix relu_backward(const Matrix &input, const Matrix &upstream) {
  Matrix::require_same_shape(input, upstream, "relu_backward");
  Matrix out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(input[i] > 0.0))
      out[i] = 0.0;
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Matrix sigmoid(const Matrix &m) {
  Matrix out = m;
  for (auto &v : out.data())
    v = sigmoid(v);
  return out;
}

// Takes the forward output, not the input.
inline Matrix sigmoid_backward(const Matrix &output, const Matrix &upstream) {
  Matrix::require_same_shape(output, upstream, "sigmoid_backward");
  Matrix out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] *= output[i] * (1.0 - output[i]);
  return out;
}

inline Matrix softmax_row(const Matrix &m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (auto &v : o)
      v /= sum;
  }
  return out;
}

// Takes the forward output. dx_c = y_c * (g_c - sum_k g_k y_k) per row.
inline Matrix softmax_row_backward(const Matrix &output, const Matrix &upstream) {
  Matrix::require_same_shape(output, upstream, "softmax_row_backward");
  Matrix out(output.rows(), output.cols());
  for (std::size_t r = 0; r < output.rows(); ++r) {
    auto y = output.row(r);
    auto g = upstream.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < y.size(); ++c)
      dot += y[c] * g[c];
    auto o = out.row(r);
    for (std::size_t c = 0; c < y.size(); ++c)
      o[c] = y[c] * (g[c] - dot);
  }
  return out;
}

/// Symmetric relative error used by all gradient checks.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Central-difference gradient of `loss` with respect to every scalar in
/// `params` (values are perturbed in place and restored bit-exactly).
/// Returns one Matrix per tensor, shaped like its value.
inline std::vector<Matrix> finite_diff_grad(const std::function<double()> &loss,
                                            std::span<ParamTensor *const> params, double eps) {
  if (!(eps > 0.0))
    throw ConfigError("finite_diff_grad: eps must be positive");
  std::vector<Matrix> out;
  out.reserve(params.size());
  std::size_t flat_index = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix &value = params[t]->value;
    Matrix g(value.rows(), value.cols());
    for (std::size_t i = 0; i < value.size(); ++i, ++flat_index) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = loss();
      value[i] = saved - eps;
      const double down = loss();
      value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw GradientCheckError("finite_diff_grad: non-finite loss while probing parameter " +
                                 std::to_string(flat_index) + " (tensor " + std::to_string(t) +
                                 ", entry " + std::to_string(i) + ")");
      g[i] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

} // namespace spsmvg
