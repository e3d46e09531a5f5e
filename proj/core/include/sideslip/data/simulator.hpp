#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "sideslip/data/manoeuvres.hpp"
#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/vehicle/model.hpp"

namespace sideslip {

// Ground-truth plant, deliberately richer than any estimation model: four
// wheels, load-sensitive brush-shaped tyres, lagged longitudinal and lateral
// load transfer, a friction ellipse for combined slip, rear-drive / split
// braking, and an optional direct-yaw-moment stability control.
struct TruthParams {
  double m = 1970.0;
  double izz = 3498.0;
  double lf = 1.47;
  double lr = 1.41;
  double h_cog = 0.55;
  double track = 1.6;
  double mu = 1.0;
  double shape_c = 1.6;    // peak shape factor of the lateral force curve
  double kf = 120000.0;    // front axle cornering stiffness at static load, N/rad
  double kr = 135000.0;    // rear axle cornering stiffness at static load, N/rad
  double load_sens = 0.15; // fractional peak-force loss per unit fractional overload
  double roll_front = 0.55;    // share of lateral load transfer on the front axle
  double ay_lag_tau = 0.09;    // suspension lag for both transfer channels, s
  double speed_gain = 4000.0;  // speed controller, N per m/s of error
  double drive_limit = 0.9;    // drive/brake force cap as a fraction of mu m g
  double esc_gain = 150000.0;  // corrective yaw moment per rad/s of excess yaw rate
  double esc_band = 0.9;       // yaw-rate threshold as a fraction of mu g / vx
  double dt_sim = 1e-3;        // inner Euler step; 10 substeps per recorded sample
  double beta_limit_deg = 30.0;  // recorded sideslip beyond this aborts the run
};

namespace detail {

// Lateral tyre force in the wheel frame: load-sensitive peak, brush-like
// shape, scaled by the remaining friction after the longitudinal demand.
inline double wheel_lateral_force(double alpha, double fz, double fz0, double fx,
                                  double axle_k, const TruthParams& p) {
  if (fz <= 0.0) return 0.0;  // wheel off the ground
  const double b = (0.5 * axle_k) / (p.shape_c * p.mu * fz0);
  double d = p.mu * fz * (1.0 - p.load_sens * (fz - fz0) / fz0);
  if (d < 0.0) d = 0.0;
  const double ellipse = std::sqrt(std::max(0.0, 1.0 - (fx / (p.mu * fz)) * (fx / (p.mu * fz))));
  return ellipse * d * std::sin(p.shape_c * std::atan(b * alpha));
}

}  // namespace detail

// Integrate one manoeuvre and record the 100 Hz sensor channels. Throws
// UnstableManoeuvre the moment the recorded sideslip passes beta_limit_deg.
inline Trajectory truth_simulate(const ManoeuvreSpec& spec, std::uint64_t seed,
                                 const TruthParams& p = {}) {
  const double wheelbase = p.lf + p.lr;
  const double weight = p.m * kGravity;
  const double fz0_front = weight * p.lr / (2.0 * wheelbase);  // per wheel
  const double fz0_rear = weight * p.lf / (2.0 * wheelbase);
  const double beta_limit = p.beta_limit_deg * std::numbers::pi / 180.0;

  const auto n = static_cast<std::size_t>(std::llround(spec.duration * 100.0));
  Trajectory tr;
  tr.name = spec.name;
  tr.kind = spec.kind;
  tr.esc_on = spec.esc_on;
  tr.seed = seed;
  tr.dt = 0.01;
  tr.resize(n);

  double vx = speed_target_at(spec, 0.0);
  double vy = 0.0, r = 0.0;
  double ax_lag = 0.0, ay_lag = 0.0;

  const int substeps = static_cast<int>(std::llround(0.01 / p.dt_sim));
  for (std::size_t i = 0; i < n; ++i) {
    for (int sub = 0; sub < substeps; ++sub) {
      const double t = (static_cast<double>(i) * static_cast<double>(substeps) + sub) * p.dt_sim;
      const double delta = steering_at(spec, t);

      // Longitudinal demand: proportional speed control, friction-capped,
      // rear-driven with an even brake split. Drive (never braking) backs
      // off with lateral load, as a driver with throttle discipline would:
      // flooring a rear-driven car mid-corner spins it. Panic braking from
      // speed can exceed the unloaded rear axle's grip, which is exactly
      // how a braking-in-turn manoeuvre loses the back end.
      double fx_total = p.speed_gain * (speed_target_at(spec, t) - vx);
      const double fx_cap = p.drive_limit * p.mu * weight;
      fx_total = std::clamp(fx_total, -fx_cap, fx_cap);
      if (fx_total > 0.0) {
        const double lat = ay_lag / (p.mu * kGravity);
        fx_total *= std::max(0.0, 1.0 - lat * lat * lat * lat);
      }

      // Stability control: above the adhesion yaw-rate band it applies a
      // direct counter-moment and progressively sheds longitudinal demand,
      // the way production systems modulate brake pressure and cut engine
      // torque to win tyre capacity back for the lateral direction. Both
      // interventions vanish continuously at the band edge, so runs that
      // never cross it are bit-identical with the toggle on or off.
      double mz = 0.0;
      if (spec.esc_on) {
        const double r_lim = p.esc_band * p.mu * kGravity / std::max(vx, 5.0);
        const double excess = std::fabs(r) - r_lim;
        if (excess > 0.0) {
          mz = -p.esc_gain * (r > 0.0 ? excess : -excess);
          fx_total *= std::max(0.25, 1.0 - 4.0 * excess);
        }
      }
      double fx_w[4];
      if (fx_total >= 0.0) {
        fx_w[kFL] = fx_w[kFR] = 0.0;
        fx_w[kRL] = fx_w[kRR] = 0.5 * fx_total;
      } else {
        fx_w[kFL] = fx_w[kFR] = 0.25 * fx_total;
        fx_w[kRL] = fx_w[kRR] = 0.25 * fx_total;
      }

      // Normal loads from the lagged transfer states, clamped at wheel lift.
      const double dlong = p.m * ax_lag * p.h_cog / (2.0 * wheelbase);
      const double dlat_f = p.roll_front * p.m * ay_lag * p.h_cog / p.track;
      const double dlat_r = (1.0 - p.roll_front) * p.m * ay_lag * p.h_cog / p.track;
      double fz_w[4];
      fz_w[kFL] = std::max(0.0, fz0_front - dlong - dlat_f);
      fz_w[kFR] = std::max(0.0, fz0_front - dlong + dlat_f);
      fz_w[kRL] = std::max(0.0, fz0_rear + dlong - dlat_r);
      fz_w[kRR] = std::max(0.0, fz0_rear + dlong + dlat_r);

      // Per-wheel slip angles with track-width speed offsets.
      const double vxl = std::max(vx - 0.5 * p.track * r, 1.0);
      const double vxr = std::max(vx + 0.5 * p.track * r, 1.0);
      const double vy_f = vy + p.lf * r, vy_r = vy - p.lr * r;
      double alpha[4];
      alpha[kFL] = delta - std::atan(vy_f / vxl);
      alpha[kFR] = delta - std::atan(vy_f / vxr);
      alpha[kRL] = -std::atan(vy_r / vxl);
      alpha[kRR] = -std::atan(vy_r / vxr);

      // A car with stability control also has ABS holding each wheel at
      // moderate slip, which preserves most of the lateral capacity; without
      // it a panicked driver can push a wheel to the rim of the friction
      // ellipse where almost nothing is left for cornering.
      const double fx_frac = spec.esc_on ? 0.70 : 0.98;
      double fy_w[4];
      for (int w = 0; w < 4; ++w) {
        const double fz0 = w < 2 ? fz0_front : fz0_rear;
        const double axle_k = w < 2 ? p.kf : p.kr;
        const double fx_lim = fx_frac * p.mu * fz_w[w];
        fx_w[w] = std::clamp(fx_w[w], -fx_lim, fx_lim);
        fy_w[w] = detail::wheel_lateral_force(alpha[w], fz_w[w], fz0, fx_w[w], axle_k, p);
      }

      // Rotate the front tyre forces into the body frame.
      const double cd = std::cos(delta), sd = std::sin(delta);
      double fxb[4], fyb[4];
      for (int w = 0; w < 4; ++w) {
        if (w < 2) {
          fxb[w] = fx_w[w] * cd - fy_w[w] * sd;
          fyb[w] = fx_w[w] * sd + fy_w[w] * cd;
        } else {
          fxb[w] = fx_w[w];
          fyb[w] = fy_w[w];
        }
      }
      const double sum_fx = fxb[0] + fxb[1] + fxb[2] + fxb[3];
      const double sum_fy = fyb[0] + fyb[1] + fyb[2] + fyb[3];

      const double moment = p.lf * (fyb[kFL] + fyb[kFR]) - p.lr * (fyb[kRL] + fyb[kRR]) +
                            0.5 * p.track * (fxb[kFR] - fxb[kFL] + fxb[kRR] - fxb[kRL]) + mz;
      const double ax_inst = sum_fx / p.m;
      const double ay_inst = sum_fy / p.m;

      if (sub == 0) {
        tr.t[i] = static_cast<double>(i) * 0.01;
        tr.delta[i] = delta;
        tr.ax[i] = ax_inst;
        tr.ay[i] = ay_inst;
        tr.vx[i] = vx;
        tr.yaw_rate[i] = r;
        for (int w = 0; w < 4; ++w) {
          tr.fx[w][i] = fx_w[w];
          tr.fy[w][i] = fy_w[w];
          tr.fz[w][i] = fz_w[w];
        }
        const double beta = std::atan(vy / std::max(vx, 0.5));
        tr.beta_me[i] = beta;
        if (std::fabs(beta) > beta_limit)
          throw UnstableManoeuvre("truth_simulate: sideslip limit exceeded in " + spec.name);
      }

      const double vx_old = vx;
      vx += p.dt_sim * (ax_inst + r * vy);
      vy += p.dt_sim * (ay_inst - r * vx_old);
      r += p.dt_sim * moment / p.izz;
      ax_lag += (p.dt_sim / p.ay_lag_tau) * (ax_inst - ax_lag);
      ay_lag += (p.dt_sim / p.ay_lag_tau) * (ay_inst - ay_lag);
    }
  }
  return tr;
}

}  // namespace sideslip
