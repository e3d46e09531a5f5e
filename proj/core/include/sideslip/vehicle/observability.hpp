#pragma once

#include <algorithm>
#include <cmath>

#include "sideslip/math/linalg.hpp"
#include "sideslip/math/tape.hpp"
#include "sideslip/vehicle/model.hpp"

namespace sideslip {

namespace detail {

// First-order sensitivities of the five observation channels plus the Lie
// derivative of each channel along the process derivative.
struct ChannelSensitivities {
  double g_x[5][2];  // d g_i / d (Vy, yaw rate)
  double g_u[5][2];  // d g_i / d (Vx, delta)
  double lie[5];     // grad_x g_i . f
};

inline ChannelSensitivities channel_sensitivities(const VehicleState& x,
                                                  const VehicleInput& u,
                                                  const VehicleParams& p,
                                                  const TyreParams& ty) {
  ad::Tape t;
  const ad::Var vy = ad::leaf(t, x.vy);
  const ad::Var r = ad::leaf(t, x.yaw_rate);
  const ad::Var vx = ad::leaf(t, u.vx);
  const ad::Var delta = ad::leaf(t, u.delta);
  const VehicleStateT<ad::Var> xs{vy, r};
  const VehicleInputT<ad::Var> us{vx, delta};
  const TyreParamsT<ad::Var> tys = lift_tyre_params(t, ty);

  const auto fa = detail::axle_forces(xs, us, p, tys, /*checked=*/false);
  const ad::Var outs[5] = {
      (fa.fyf * fa.cos_delta + fa.fyr) / p.m,
      r + 0.0,  // distinct node so the seed is channel-specific
      fa.fyf,
      fa.fyr,
      ad::atan(vy / vx),
  };
  const double f1 =
      ((fa.fyf * fa.cos_delta + fa.fyr) / p.m - vx * r).value();
  const double f2 =
      ((fa.fyf * fa.cos_delta * p.lf - fa.fyr * p.lr) / p.izz).value();

  ChannelSensitivities s;
  for (int i = 0; i < 5; ++i) {
    const auto adj = t.backward(outs[i].id());
    s.g_x[i][0] = adj[vy.id()];
    s.g_x[i][1] = adj[r.id()];
    s.g_u[i][0] = adj[vx.id()];
    s.g_u[i][1] = adj[delta.id()];
    s.lie[i] = adj[vy.id()] * f1 + adj[r.id()] * f2;
  }
  return s;
}

}  // namespace detail

// Numerical rank of the sufficient-condition sensitivity matrix of the five
// observation channels: [dg/dx | dg/du | d(L_f g)/dx], a 5x6 stack of the
// observation Jacobian and the process coupling (the state gradient of each
// channel's Lie derivative along the state derivative, taken by central
// differences of the tape-computed Lie values). The value of L_f g itself is
// g_x . f with scalar coefficients, an exact combination of the dg/dx
// columns, so only its gradient adds independent (second-order) content.
//
// Because ay = (Fyf cos d + Fyr)/m and L_f commutes with that fixed
// combination, the ay row equals (cos d * Fyf row + Fyr row)/m in every
// column except d(g)/d(delta), where it differs by -Fyf sin(d)/m. The rank
// therefore drops below five exactly at delta = k pi. At the exact origin
// (zero slip on both axles) the rear-force and beta rows carry no curvature
// and the honest rank is four as well; meaningful queries are cornering
// operating points, which is the regime where sideslip matters at all.
// Rows are unit-normalised before the SVD; the mixed units (N vs rad) would
// otherwise swamp the 1e-8 tolerance. Rank 0 when Vx ~ 0: with no forward
// motion the slip angles and beta are undefined and nothing is measurable.
inline int observability_rank(const VehicleState& x, const VehicleInput& u,
                              const VehicleParams& p, const TyreParams& ty) {
  if (std::fabs(u.vx) < 1e-9) return 0;

  const auto center = detail::channel_sensitivities(x, u, p, ty);
  const double hv = 1e-5 * std::max(1.0, std::fabs(x.vy));
  const double hr = 1e-5 * std::max(1.0, std::fabs(x.yaw_rate));
  const auto vp = detail::channel_sensitivities({x.vy + hv, x.yaw_rate}, u, p, ty);
  const auto vm = detail::channel_sensitivities({x.vy - hv, x.yaw_rate}, u, p, ty);
  const auto rp = detail::channel_sensitivities({x.vy, x.yaw_rate + hr}, u, p, ty);
  const auto rm = detail::channel_sensitivities({x.vy, x.yaw_rate - hr}, u, p, ty);

  Matd m(5, 6);
  for (int i = 0; i < 5; ++i) {
    m(i, 0) = center.g_x[i][0];
    m(i, 1) = center.g_x[i][1];
    m(i, 2) = center.g_u[i][0];
    m(i, 3) = center.g_u[i][1];
    m(i, 4) = (vp.lie[i] - vm.lie[i]) / (2.0 * hv);
    m(i, 5) = (rp.lie[i] - rm.lie[i]) / (2.0 * hr);
  }
  for (int i = 0; i < 5; ++i) {
    double n = 0.0;
    for (int j = 0; j < 6; ++j) n += m(i, j) * m(i, j);
    n = std::sqrt(n);
    if (n > 0.0)
      for (int j = 0; j < 6; ++j) m(i, j) /= n;
  }
  return numerical_rank(m, 1e-8);
}

}  // namespace sideslip
