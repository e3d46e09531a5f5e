#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/filter/ukf.hpp"
#include "sideslip/vehicle/model.hpp"

namespace sideslip {

// 95% two-sided band for a 2-dof chi-square NEES: -2 ln(1-p).
inline constexpr double kNees95Lower = 0.0506356159685798;
inline constexpr double kNees95Upper = 7.3777589082278725;

// Which observation channels participate in the update. Baselines without a
// pseudo-measurement run the same filter with beta_dd switched off.
struct ObservationMask {
  bool ay = true;
  bool yaw_rate = true;
  bool fyf = true;
  bool fyr = true;
  bool beta_dd = true;
};

inline ObservationMask four_channel_mask() {
  return {true, true, true, true, false};
}

inline int active_count(const ObservationMask& mask) {
  return int(mask.ay) + int(mask.yaw_rate) + int(mask.fyf) + int(mask.fyr) +
         int(mask.beta_dd);
}

// Vehicle wiring of the generic unscented predict: sigma points through the
// single-track step, then additive diag(sigma^2) process covariance.
template <class S>
FilterStateT<S> predict_vehicle(const FilterStateT<S>& s,
                                const VehicleInputT<S>& u,
                                const NoiseParamsT<S>& q,
                                const VehicleParams& p,
                                const TyreParamsT<S>& ty, const UtParams& ut) {
  Matrix<S> qm(2, 2);
  qm(0, 0) = q.sigma_vy * q.sigma_vy;
  qm(1, 1) = q.sigma_yawrate * q.sigma_yawrate;
  qm(0, 1) = q.sigma_vy * 0.0;
  qm(1, 0) = q.sigma_vy * 0.0;
  return predict(
      s,
      [&](const Matrix<S>& col) {
        const VehicleStateT<S> x{col(0, 0), col(1, 0)};
        const VehicleStateT<S> y = step_zoh(x, u, p, ty);
        Matrix<S> out(2, 1);
        out(0, 0) = y.vy;
        out(1, 0) = y.yaw_rate;
        return out;
      },
      qm, ut);
}

// Vehicle wiring of the generic unscented update over the active channels of
// (ay, yaw rate, Fyf, Fyr, beta_dd) with R = diag of the squared stds.
template <class S>
UpdateResultT<S> update_vehicle(const FilterStateT<S>& s,
                                const VehicleInputT<S>& u,
                                const ObservationT<S>& z,
                                const NoiseParamsT<S>& r,
                                const ObservationMask& mask,
                                const VehicleParams& p,
                                const TyreParamsT<S>& ty, const UtParams& ut) {
  const bool act[5] = {mask.ay, mask.yaw_rate, mask.fyf, mask.fyr,
                       mask.beta_dd};
  const S z_all[5] = {z.ay, z.yaw_rate, z.fyf, z.fyr, z.beta_dd};
  const S r_all[5] = {r.r_ay, r.r_yawrate, r.r_fyf, r.r_fyr, r.sigma_dd};
  const int m = active_count(mask);

  Matrix<S> zm(m, 1);
  Matrix<S> rm(m, m);
  int row = 0;
  for (int i = 0; i < 5; ++i) {
    if (!act[i]) continue;
    zm(row, 0) = z_all[i];
    int col = 0;
    for (int j = 0; j < 5; ++j) {
      if (!act[j]) continue;
      rm(row, col) = i == j ? r_all[i] * r_all[i] : r_all[i] * 0.0;
      ++col;
    }
    ++row;
  }

  return update(
      s,
      [&](const Matrix<S>& col) {
        const VehicleStateT<S> x{col(0, 0), col(1, 0)};
        const ObservationT<S> ob = observe(x, u, p, ty);
        const S ob_all[5] = {ob.ay, ob.yaw_rate, ob.fyf, ob.fyr, ob.beta_dd};
        Matrix<S> out(m, 1);
        int k = 0;
        for (int i = 0; i < 5; ++i)
          if (act[i]) out(k++, 0) = ob_all[i];
        return out;
      },
      zm, rm, ut);
}

// Warm start: zero lateral velocity, first yaw-rate measurement.
inline FilterState initial_filter_state(double yaw_rate0) {
  FilterState s;
  s.mean = Matd(2, 1);
  s.mean(0, 0) = 0.0;
  s.mean(1, 0) = yaw_rate0;
  s.cov = Matd(2, 2);
  s.cov(0, 0) = 0.1 * 0.1;
  s.cov(1, 1) = 0.05 * 0.05;
  s.cov(0, 1) = 0.0;
  s.cov(1, 0) = 0.0;
  return s;
}

// Normalised estimation error squared against the reference state
// (Vy from the measured sideslip, measured yaw rate), 2x2 solve in place.
inline double nees_2dof(const Matd& mean, const Matd& cov, double vy_ref,
                        double yaw_ref) {
  const double e0 = mean(0, 0) - vy_ref;
  const double e1 = mean(1, 0) - yaw_ref;
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  const double x0 = (cov(1, 1) * e0 - cov(0, 1) * e1) / det;
  const double x1 = (cov(0, 0) * e1 - cov(1, 0) * e0) / det;
  return e0 * x0 + e1 * x1;
}

struct RunResult {
  std::vector<double> beta_hat;  // atan(posterior Vy / Vx)
  std::vector<double> vy_hat;
  std::vector<double> yaw_hat;
  std::vector<double> nees;
  std::vector<double> cov_trace;
  // per-step innovations in fixed channel order; masked channels stay 0
  std::vector<std::array<double, 5>> innovations;
  bool diverged = false;
  std::size_t divergence_step = 0;
};

// Full recursion over one gated trajectory: per step, query the noise
// source, predict, update, record diagnostics. On divergence (cov trace
// above 1e6) the run aborts and the last estimate is held so downstream
// metrics stay defined; the flag and step index report the event.
template <class NoiseSource>
RunResult run_filter(const Trajectory& tr, NoiseSource&& noise_at,
                     std::span<const double> beta_dd,
                     const ObservationMask& mask, const VehicleParams& p,
                     const TyreParams& ty, const UtParams& ut = {}) {
  const std::size_t n = tr.size();
  if (n == 0) throw EmptyDataset("run_filter: empty trajectory");
  for (std::size_t i = 0; i < n; ++i)
    if (tr.vx[i] < 5.0)
      throw DegenerateSpeed("run_filter: Vx below 5 m/s at step " +
                            std::to_string(i));
  if (mask.beta_dd && beta_dd.size() != n)
    throw LengthMismatch("run_filter: beta_dd length " +
                         std::to_string(beta_dd.size()) + " vs trajectory " +
                         std::to_string(n));

  RunResult out;
  out.beta_hat.resize(n);
  out.vy_hat.resize(n);
  out.yaw_hat.resize(n);
  out.nees.resize(n);
  out.cov_trace.resize(n);
  out.innovations.assign(n, {0.0, 0.0, 0.0, 0.0, 0.0});

  FilterState s = initial_filter_state(tr.yaw_rate[0]);
  const bool act[5] = {mask.ay, mask.yaw_rate, mask.fyf, mask.fyr,
                       mask.beta_dd};
  for (std::size_t i = 0; i < n; ++i) {
    const VehicleInput u{tr.vx[i], tr.delta[i]};
    const NoiseParams np = noise_at(i);
    s = predict_vehicle(s, u, np, p, ty, ut);

    // the update can only shrink the trace, so divergence shows up here
    const double prior_trace = s.cov(0, 0) + s.cov(1, 1);
    if (prior_trace > 1e6) {
      out.diverged = true;
      out.divergence_step = i;
      const double bh = i > 0 ? out.beta_hat[i - 1] : 0.0;
      const double vh = i > 0 ? out.vy_hat[i - 1] : 0.0;
      const double yh = i > 0 ? out.yaw_hat[i - 1] : tr.yaw_rate[0];
      const double ne = i > 0 ? out.nees[i - 1] : 0.0;
      for (std::size_t j = i; j < n; ++j) {
        out.beta_hat[j] = bh;
        out.vy_hat[j] = vh;
        out.yaw_hat[j] = yh;
        out.nees[j] = ne;
        out.cov_trace[j] = prior_trace;
      }
      break;
    }

    ObservationT<double> z;
    z.ay = tr.ay[i];
    z.yaw_rate = tr.yaw_rate[i];
    z.fyf = axle_front(tr.fy, i);
    z.fyr = axle_rear(tr.fy, i);
    z.beta_dd = mask.beta_dd ? beta_dd[i] : 0.0;
    const auto res = update_vehicle(s, u, z, np, mask, p, ty, ut);
    s = res.state;

    out.vy_hat[i] = s.mean(0, 0);
    out.yaw_hat[i] = s.mean(1, 0);
    out.beta_hat[i] = std::atan(s.mean(0, 0) / tr.vx[i]);
    out.nees[i] = nees_2dof(s.mean, s.cov, tr.vx[i] * std::tan(tr.beta_me[i]),
                            tr.yaw_rate[i]);
    out.cov_trace[i] = s.cov(0, 0) + s.cov(1, 1);
    int k = 0;
    for (int c = 0; c < 5; ++c)
      if (act[c]) out.innovations[i][c] = res.innovation(k++, 0);
  }
  return out;
}

}  // namespace sideslip
