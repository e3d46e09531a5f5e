#pragma once

#include <cstddef>
#include <vector>

#include "sideslip/errors.hpp"
#include "sideslip/math/tape.hpp"

namespace sideslip {

// Small dense row-major matrix over double or ad::Var. Filter-sized only
// (n <= 8); nothing here is meant to scale.
template <class S>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), d_(static_cast<std::size_t>(rows) * cols) {}

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  S& operator()(int r, int c) { return d_[static_cast<std::size_t>(r) * cols_ + c]; }
  const S& operator()(int r, int c) const { return d_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::vector<S>& data() { return d_; }
  const std::vector<S>& data() const { return d_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<S> d_;
};

using Matd = Matrix<double>;

inline Matd identity(int n) {
  Matd m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

template <class S>
Matrix<S> operator+(const Matrix<S>& a, const Matrix<S>& b) {
  Matrix<S> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  return c;
}

template <class S>
Matrix<S> operator-(const Matrix<S>& a, const Matrix<S>& b) {
  Matrix<S> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

// Explicit accumulator init: entries of a fresh Matrix<ad::Var> are unbound
// until assigned, so no += on default-constructed elements.
template <class S>
Matrix<S> operator*(const Matrix<S>& a, const Matrix<S>& b) {
  Matrix<S> c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      S s = a(i, 0) * b(0, j);
      for (int k = 1; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

template <class S>
Matrix<S> transposed(const Matrix<S>& a) {
  Matrix<S> c(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) c(j, i) = a(i, j);
  return c;
}

template <class S>
Matrix<S> scaled(const Matrix<S>& a, double s) {
  Matrix<S> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) c.data()[i] = a.data()[i] * s;
  return c;
}

// (A + A^T)/2, guards covariance symmetry against rounding drift.
template <class S>
Matrix<S> symmetrized(const Matrix<S>& a) {
  Matrix<S> c(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) c(i, j) = (a(i, j) + a(j, i)) * 0.5;
  return c;
}

template <class S>
Matrix<double> values_of(const Matrix<S>& a) {
  Matrix<double> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) c.data()[i] = ad::value_of(a.data()[i]);
  return c;
}

}  // namespace sideslip
