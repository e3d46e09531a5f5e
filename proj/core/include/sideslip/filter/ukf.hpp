#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sideslip/errors.hpp"
#include "sideslip/math/linalg.hpp"
#include "sideslip/math/matrix.hpp"
#include "sideslip/math/tape.hpp"

namespace sideslip {

// Scaled unscented transform spread parameters. alpha = 1 keeps the zeroth
// mean weight non-negative on a two-state model.
struct UtParams {
  double alpha = 1.0;
  double beta = 2.0;
  double kappa = 0.0;
};

// Per-step noise parameters: process stds (already at the 100 Hz step scale,
// squared into the additive process covariance), observation stds, and the
// level of distrust assigned to the pseudo-measurement channel.
template <class S>
struct NoiseParamsT {
  S sigma_vy;
  S sigma_yawrate;
  S r_ay;
  S r_yawrate;
  S r_fyf;
  S r_fyr;
  S sigma_dd;
};
using NoiseParams = NoiseParamsT<double>;

inline NoiseParams default_noise_params() {
  return {7e-4, 2e-3, 0.033, 1e-3, 26.0, 56.0, 1.0};
}

// Gaussian belief: mean is n x 1, cov is n x n symmetric positive definite.
template <class S>
struct FilterStateT {
  Matrix<S> mean;
  Matrix<S> cov;
};
using FilterState = FilterStateT<double>;

// 2n+1 sigma points as columns, with mean and covariance weights. Weights
// are plain numbers: they depend only on the spread parameters.
template <class S>
struct SigmaPointsT {
  Matrix<S> points;
  std::vector<double> wm;
  std::vector<double> wc;
};

template <class S>
SigmaPointsT<S> sigma_points(const FilterStateT<S>& s, const UtParams& ut) {
  const int n = s.mean.rows();
  const double lambda = ut.alpha * ut.alpha * (n + ut.kappa) - n;
  const double gamma = std::sqrt(n + lambda);
  const Matrix<S> l = cholesky_jittered(s.cov);

  SigmaPointsT<S> sp;
  sp.points = Matrix<S>(n, 2 * n + 1);
  for (int i = 0; i < n; ++i) {
    sp.points(i, 0) = s.mean(i, 0);
    for (int j = 0; j < n; ++j) {
      sp.points(i, 1 + j) = s.mean(i, 0) + l(i, j) * gamma;
      sp.points(i, 1 + n + j) = s.mean(i, 0) - l(i, j) * gamma;
    }
  }
  sp.wm.assign(2 * n + 1, 1.0 / (2.0 * (n + lambda)));
  sp.wc = sp.wm;
  sp.wm[0] = lambda / (n + lambda);
  sp.wc[0] = sp.wm[0] + 1.0 - ut.alpha * ut.alpha + ut.beta;
  return sp;
}

namespace detail {

// Weighted mean of columns; explicit first term keeps Matrix<Var> entries
// bound from the start.
template <class S>
Matrix<S> weighted_column_mean(const Matrix<S>& cols, const std::vector<double>& w) {
  Matrix<S> m(cols.rows(), 1);
  for (int i = 0; i < cols.rows(); ++i) {
    S s = cols(i, 0) * w[0];
    for (int j = 1; j < cols.cols(); ++j) s += cols(i, j) * w[j];
    m(i, 0) = s;
  }
  return m;
}

// sum_j w_j (a_col_j - am)(b_col_j - bm)^T
template <class S>
Matrix<S> weighted_cross_cov(const Matrix<S>& a, const Matrix<S>& am,
                             const Matrix<S>& b, const Matrix<S>& bm,
                             const std::vector<double>& w) {
  Matrix<S> c(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int k = 0; k < b.rows(); ++k) {
      S s = (a(i, 0) - am(i, 0)) * (b(k, 0) - bm(k, 0)) * w[0];
      for (int j = 1; j < a.cols(); ++j)
        s += (a(i, j) - am(i, 0)) * (b(k, j) - bm(k, 0)) * w[j];
      c(i, k) = s;
    }
  return c;
}

}  // namespace detail

// Unscented predict: propagate re-drawn sigma points through the process
// callable (n x 1 column in, n x 1 column out) and add the process
// covariance q after propagation.
template <class S, class Process>
FilterStateT<S> predict(const FilterStateT<S>& s, Process&& f, const Matrix<S>& q,
                        const UtParams& ut) {
  const auto sp = sigma_points(s, ut);
  const int n = s.mean.rows();
  Matrix<S> prop(n, sp.points.cols());
  for (int j = 0; j < sp.points.cols(); ++j) {
    Matrix<S> col(n, 1);
    for (int i = 0; i < n; ++i) col(i, 0) = sp.points(i, j);
    const Matrix<S> y = f(col);
    for (int i = 0; i < n; ++i) prop(i, j) = y(i, 0);
  }
  FilterStateT<S> out;
  out.mean = detail::weighted_column_mean(prop, sp.wm);
  out.cov = symmetrized(
      detail::weighted_cross_cov(prop, out.mean, prop, out.mean, sp.wc) + q);
  return out;
}

template <class S>
struct UpdateResultT {
  FilterStateT<S> state;
  Matrix<S> innovation;      // z - predicted observation, m x 1
  Matrix<S> gain;            // n x m
  Matrix<S> innovation_cov;  // m x m
};

// Unscented update over an m-channel observation callable. The singularity
// guard normalises the innovation covariance by its diagonal before taking
// the condition number: the raw number is scale-dependent and a deliberately
// huge distrust std (the sigma_dd -> inf limit) must behave as a benign
// channel switch-off, not an error.
template <class S, class Obs>
UpdateResultT<S> update(const FilterStateT<S>& s, Obs&& h, const Matrix<S>& z,
                        const Matrix<S>& r, const UtParams& ut) {
  const auto sp = sigma_points(s, ut);
  const int n = s.mean.rows();
  const int m = z.rows();
  Matrix<S> zs(m, sp.points.cols());
  for (int j = 0; j < sp.points.cols(); ++j) {
    Matrix<S> col(n, 1);
    for (int i = 0; i < n; ++i) col(i, 0) = sp.points(i, j);
    const Matrix<S> zj = h(col);
    for (int i = 0; i < m; ++i) zs(i, j) = zj(i, 0);
  }
  const Matrix<S> zbar = detail::weighted_column_mean(zs, sp.wm);
  const Matrix<S> s_cov =
      symmetrized(detail::weighted_cross_cov(zs, zbar, zs, zbar, sp.wc) + r);

  const Matd sv = values_of(s_cov);
  Matd norm(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const double di = sv(i, i) > 0.0 ? std::sqrt(sv(i, i)) : 1.0;
      const double dj = sv(j, j) > 0.0 ? std::sqrt(sv(j, j)) : 1.0;
      norm(i, j) = sv(i, j) / (di * dj);
    }
  if (condition_number(norm) > 1e12)
    throw SingularInnovation("innovation covariance numerically singular");

  const Matrix<S> p_xz =
      detail::weighted_cross_cov(sp.points, s.mean, zs, zbar, sp.wc);

  UpdateResultT<S> out;
  out.innovation_cov = s_cov;
  out.gain = cholesky_solve_right(cholesky_jittered(s_cov), p_xz);
  out.innovation = z - zbar;
  out.state.mean = s.mean + out.gain * out.innovation;
  out.state.cov =
      symmetrized(s.cov - out.gain * s_cov * transposed(out.gain));
  return out;
}

}  // namespace sideslip
