#pragma once

#include <cmath>
#include <utility>

#include "sideslip/errors.hpp"
#include "sideslip/math/tape.hpp"

namespace sideslip {

inline constexpr double kGravity = 9.81;

struct VehicleParams {
  double m = 1970.0;     // kg
  double izz = 3498.0;   // kg m^2
  double lf = 1.47;      // m, CoG to front axle
  double lr = 1.41;      // m, CoG to rear axle
  double h_cog = 0.55;   // m
  double dt = 0.01;      // s, 100 Hz
};

template <class S>
struct TyreParamsT {
  S cf{};     // front axle cornering stiffness, N/rad
  S cr{};     // rear axle cornering stiffness, N/rad
  S mu{};     // peak friction coefficient
  S eps_v{};  // velocity reduction friction coefficient, s/m
};
using TyreParams = TyreParamsT<double>;

inline TyreParams default_tyre_params() { return {115000.0, 125000.0, 0.95, 0.01}; }

template <class S>
struct VehicleStateT {
  S vy{};
  S yaw_rate{};
};
using VehicleState = VehicleStateT<double>;

template <class S>
struct VehicleInputT {
  S vx{};
  S delta{};
};
using VehicleInput = VehicleInputT<double>;

template <class S>
struct ObservationT {
  S ay{};
  S yaw_rate{};
  S fyf{};
  S fyr{};
  S beta_dd{};
};
using Observation = ObservationT<double>;

// Unchecked variant used by the observability analysis, which probes speeds
// below the filter's operating envelope.
template <class S>
std::pair<S, S> slip_angles_unchecked(const VehicleStateT<S>& x, const VehicleInputT<S>& u,
                                      const VehicleParams& p) {
  using std::atan;
  const S af = u.delta - atan((x.vy + p.lf * x.yaw_rate) / u.vx);
  const S ar = -atan((x.vy - p.lr * x.yaw_rate) / u.vx);
  return {af, ar};
}

template <class S>
std::pair<S, S> slip_angles(const VehicleStateT<S>& x, const VehicleInputT<S>& u,
                            const VehicleParams& p) {
  if (ad::value_of(u.vx) < 1.0)
    throw DegenerateSpeed("slip_angles requires Vx >= 1 m/s");
  return slip_angles_unchecked(x, u, p);
}

// Steady-state longitudinal transfer; sums to m g for every ax (|ax| <= 12).
template <class S>
std::pair<S, S> axle_normal_loads(const S& ax, const VehicleParams& p) {
  const double l = p.lf + p.lr;
  const S fzf = (kGravity * p.lr - ax * p.h_cog) * (p.m / l);
  const S fzr = (kGravity * p.lf + ax * p.h_cog) * (p.m / l);
  return {fzf, fzr};
}

// Dugoff axle force with speed-degraded friction. Odd in alpha by
// construction: the magnitude is computed from |tan alpha| and the sign
// reapplied, so Fy(-a) == -Fy(a) bit for bit.
template <class S>
S dugoff_lateral_force(const S& alpha, const S& fz, const S& vx, const TyreParamsT<S>& ty,
                       const S& c) {
  using std::abs;
  using std::max;
  using std::tan;
  const S t_abs = tan(abs(alpha));
  if (ad::value_of(t_abs) < 1e-9) {
    // linear limit; keeps the local partial at C without touching 1/|tan|
    return c * tan(alpha);
  }
  const S speed_factor = max(1.0 - ty.eps_v * vx * t_abs, 0.0);
  const S lambda = ty.mu * fz * speed_factor / ((c * t_abs) * 2.0);
  S mag = c * t_abs;
  if (ad::value_of(lambda) < 1.0) mag = mag * (lambda * (2.0 - lambda));
  return ad::value_of(alpha) >= 0.0 ? mag : -mag;
}

namespace detail {

template <class S>
struct AxleForces {
  S fyf{}, fyr{};
  S cos_delta{};
};

// The estimator's single-track model ignores load transfer: axle loads are
// the static split (lateral transfer, roll and pitch stay out by design).
template <class S>
AxleForces<S> axle_forces(const VehicleStateT<S>& x, const VehicleInputT<S>& u,
                          const VehicleParams& p, const TyreParamsT<S>& ty, bool checked) {
  const auto [af, ar] = checked ? slip_angles(x, u, p) : slip_angles_unchecked(x, u, p);
  const double l = p.lf + p.lr;
  const double fzf0 = p.m * kGravity * p.lr / l;
  const double fzr0 = p.m * kGravity * p.lf / l;
  using std::cos;
  AxleForces<S> out;
  out.fyf = dugoff_lateral_force(af, ad::scalar_like(af, fzf0), u.vx, ty, ty.cf);
  out.fyr = dugoff_lateral_force(ar, ad::scalar_like(ar, fzr0), u.vx, ty, ty.cr);
  out.cos_delta = cos(u.delta);
  return out;
}

}  // namespace detail

template <class S>
VehicleStateT<S> process_derivative(const VehicleStateT<S>& x, const VehicleInputT<S>& u,
                                    const VehicleParams& p, const TyreParamsT<S>& ty) {
  const auto fa = detail::axle_forces(x, u, p, ty, /*checked=*/true);
  VehicleStateT<S> d;
  d.vy = (fa.fyf * fa.cos_delta + fa.fyr) / p.m - u.vx * x.yaw_rate;
  d.yaw_rate = (fa.fyf * fa.cos_delta * p.lf - fa.fyr * p.lr) / p.izz;
  return d;
}

// Euler step under zero-order hold; noise is a per-step process draw.
template <class S>
VehicleStateT<S> step_zoh(const VehicleStateT<S>& x, const VehicleInputT<S>& u,
                          const VehicleParams& p, const TyreParamsT<S>& ty,
                          const VehicleState& noise = {}) {
  const VehicleStateT<S> d = process_derivative(x, u, p, ty);
  VehicleStateT<S> n;
  n.vy = x.vy + (d.vy + noise.vy) * p.dt;
  n.yaw_rate = x.yaw_rate + (d.yaw_rate + noise.yaw_rate) * p.dt;
  return n;
}

template <class S>
ObservationT<S> observe(const VehicleStateT<S>& x, const VehicleInputT<S>& u,
                        const VehicleParams& p, const TyreParamsT<S>& ty) {
  const auto fa = detail::axle_forces(x, u, p, ty, /*checked=*/true);
  using std::atan;
  ObservationT<S> z;
  z.ay = (fa.fyf * fa.cos_delta + fa.fyr) / p.m;
  z.yaw_rate = x.yaw_rate;
  z.fyf = fa.fyf;
  z.fyr = fa.fyr;
  z.beta_dd = atan(x.vy / u.vx);
  return z;
}

template <class S>
TyreParamsT<ad::Var> lift_tyre_params(ad::Tape& t, const TyreParamsT<S>& ty) {
  return {ad::lift(t, ad::value_of(ty.cf)), ad::lift(t, ad::value_of(ty.cr)),
          ad::lift(t, ad::value_of(ty.mu)), ad::lift(t, ad::value_of(ty.eps_v))};
}

}  // namespace sideslip
