#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sideslip/errors.hpp"
#include "sideslip/math/matrix.hpp"

namespace sideslip {

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Pivot checks read recorded values, so the same code factorises Matrix<Var>
// while the tape captures every sqrt and division.
template <class S>
Matrix<S> cholesky(const Matrix<S>& a) {
  const int n = a.rows();
  Matrix<S> l(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) l(i, j) = a(i, j) * 0.0;
  for (int j = 0; j < n; ++j) {
    S d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(ad::value_of(d) > 0.0))
      throw NotPositiveDefinite("cholesky pivot " + std::to_string(j) + " is " +
                                std::to_string(ad::value_of(d)));
    using std::sqrt;
    const S piv = sqrt(d);
    l(j, j) = piv;
    for (int i = j + 1; i < n; ++i) {
      S s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / piv;
    }
  }
  return l;
}

// Retry once with +1e-9 I; a second failure is fatal for the caller's step.
template <class S>
Matrix<S> cholesky_jittered(const Matrix<S>& a) {
  try {
    return cholesky(a);
  } catch (const NotPositiveDefinite&) {
    Matrix<S> b = a;
    for (int i = 0; i < b.rows(); ++i) b(i, i) = b(i, i) + 1e-9;
    return cholesky(b);
  }
}

// Solves L y = b, then L^T x = y.
template <class S>
std::vector<S> cholesky_solve(const Matrix<S>& l, std::vector<S> b) {
  const int n = l.rows();
  for (int i = 0; i < n; ++i) {
    S s = b[i];
    for (int k = 0; k < i; ++k) s -= l(i, k) * b[k];
    b[i] = s / l(i, i);
  }
  for (int i = n; i-- > 0;) {
    S s = b[i];
    for (int k = i + 1; k < n; ++k) s -= l(k, i) * b[k];
    b[i] = s / l(i, i);
  }
  return b;
}

// X = B L^-T L^-1 (i.e. X = B A^-1 for A = L L^T), row by row.
template <class S>
Matrix<S> cholesky_solve_right(const Matrix<S>& l, const Matrix<S>& b) {
  Matrix<S> x(b.rows(), b.cols());
  std::vector<S> row(b.cols());
  for (int i = 0; i < b.rows(); ++i) {
    for (int j = 0; j < b.cols(); ++j) row[j] = b(i, j);
    row = cholesky_solve(l, std::move(row));
    for (int j = 0; j < b.cols(); ++j) x(i, j) = row[j];
  }
  return x;
}

// Singular values by one-sided Jacobi, descending. Double path only.
inline std::vector<double> singular_values(Matd a) {
  const int m = a.rows(), n = a.cols();
  if (m < n) a = transposed(a);
  const int rows = a.rows(), cols = a.cols();
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < cols - 1; ++p)
      for (int q = p + 1; q < cols; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < rows; ++i) {
          app += a(i, p) * a(i, p);
          aqq += a(i, q) * a(i, q);
          apq += a(i, p) * a(i, q);
        }
        off = std::max(off, std::fabs(apq) / (std::sqrt(app * aqq) + 1e-300));
        if (std::fabs(apq) < 1e-300) continue;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < rows; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
      }
    if (off < 1e-14) break;
  }
  std::vector<double> sv(cols);
  for (int j = 0; j < cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < rows; ++i) s += a(i, j) * a(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

// Numerical rank with tolerance relative to the largest singular value.
inline int numerical_rank(const Matd& a, double tol) {
  const std::vector<double> sv = singular_values(a);
  if (sv.empty() || sv[0] == 0.0) return 0;
  int r = 0;
  for (double s : sv)
    if (s > tol * sv[0]) ++r;
  return r;
}

inline double condition_number(const Matd& a) {
  const std::vector<double> sv = singular_values(a);
  if (sv.empty() || sv.back() == 0.0) return std::numeric_limits<double>::infinity();
  return sv.front() / sv.back();
}

}  // namespace sideslip
