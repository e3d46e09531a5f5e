#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "sideslip/math/gradcheck.hpp"
#include "sideslip/math/rng.hpp"
#include "sideslip/vehicle/model.hpp"
#include "sideslip/vehicle/observability.hpp"
#include "sideslip/vehicle/tyre_fit.hpp"

using namespace sideslip;

namespace {
const VehicleParams kP;  // paper values
const TyreParams kTy = default_tyre_params();
}  // namespace

TEST_CASE("slip angles: straight driving and pure steering") {
  const VehicleInput straight{20.0, 0.0};
  auto [af, ar] = slip_angles(VehicleState{0.0, 0.0}, straight, kP);
  CHECK(af == 0.0);
  CHECK(ar == 0.0);
  const VehicleInput steered{20.0, 0.1};
  std::tie(af, ar) = slip_angles(VehicleState{0.0, 0.0}, steered, kP);
  CHECK(af == 0.1);
  CHECK(ar == 0.0);
}

TEST_CASE("slip angles match direct arithmetic") {
  const VehicleState x{0.5, 0.2};
  const VehicleInput u{20.0, 0.0};
  const auto [af, ar] = slip_angles(x, u, kP);
  CHECK(af == doctest::Approx(-std::atan((0.5 + 1.47 * 0.2) / 20.0)).epsilon(1e-15));
  CHECK(ar == doctest::Approx(-std::atan((0.5 - 1.41 * 0.2) / 20.0)).epsilon(1e-15));
}

TEST_CASE("slip angles reject degenerate speed") {
  CHECK_THROWS_AS(slip_angles(VehicleState{0.0, 0.0}, VehicleInput{0.5, 0.0}, kP),
                  DegenerateSpeed);
}

TEST_CASE("axle loads: static split, conservation, transfer sign") {
  const auto [fzf0, fzr0] = axle_normal_loads(0.0, kP);
  CHECK(fzf0 == doctest::Approx(1970.0 * 9.81 * 1.41 / 2.88).epsilon(1e-12));
  for (double ax : {-8.0, -2.0, 0.0, 3.0, 11.0}) {
    const auto [f, r] = axle_normal_loads(ax, kP);
    CHECK(f + r == doctest::Approx(1970.0 * 9.81).epsilon(1e-14));
  }
  const auto [fzf_acc, fzr_acc] = axle_normal_loads(3.0, kP);
  CHECK(fzf_acc < fzf0);
  CHECK(fzr_acc > fzr0);
}

TEST_CASE("dugoff: zero slip, saturation, linear regime") {
  CHECK(dugoff_lateral_force(0.0, 9461.0, 20.0, kTy, kTy.cf) == 0.0);

  // near 90 deg the force saturates to mu Fz (eps_v = 0 isolates the limit)
  TyreParams ty = kTy;
  ty.eps_v = 0.0;
  const double sat = dugoff_lateral_force(1.553, 9461.0, 20.0, ty, ty.cf);
  CHECK(sat == doctest::Approx(ty.mu * 9461.0).epsilon(1e-3));
  CHECK(sat < ty.mu * 9461.0);

  const double a = 0.3 * M_PI / 180.0;
  const double lin = dugoff_lateral_force(a, 9461.0, 20.0, kTy, kTy.cf);
  CHECK(lin == doctest::Approx(kTy.cf * a).epsilon(0.02));
}

TEST_CASE("dugoff: friction-circle bound over random inputs") {
  Rng rng(101);
  for (int i = 0; i < 100000; ++i) {
    TyreParams ty;
    ty.cf = rng.uniform(2e4, 4e5);
    ty.cr = ty.cf;
    ty.mu = rng.uniform(0.3, 1.2);
    ty.eps_v = rng.uniform(0.0, 0.05);
    const double alpha = rng.uniform(-1.5, 1.5);
    const double fz = rng.uniform(200.0, 14000.0);
    const double vx = rng.uniform(1.0, 50.0);
    const double fy = dugoff_lateral_force(alpha, fz, vx, ty, ty.cf);
    CHECK(std::fabs(fy) <= ty.mu * fz * (1.0 + 1e-12));
    if (alpha != 0.0) CHECK(fy * alpha >= 0.0);
  }
}

TEST_CASE("dugoff: odd symmetry is exact") {
  Rng rng(55);
  for (int i = 0; i < 20000; ++i) {
    const double alpha = rng.uniform(1e-6, 1.5);
    const double fz = rng.uniform(200.0, 14000.0);
    const double vx = rng.uniform(1.0, 50.0);
    const double fp = dugoff_lateral_force(alpha, fz, vx, kTy, kTy.cf);
    const double fm = dugoff_lateral_force(-alpha, fz, vx, kTy, kTy.cf);
    const double neg = -fp;
    CHECK(std::memcmp(&fm, &neg, sizeof(double)) == 0);
  }
}

namespace {
// Linear bicycle model, written out independently of the implementation.
void linear_derivative(const VehicleState& x, const VehicleInput& u, double& dvy, double& dr) {
  const double cf = kTy.cf, cr = kTy.cr;
  const double m = kP.m, izz = kP.izz, lf = kP.lf, lr = kP.lr, vx = u.vx;
  dvy = -(cf + cr) / (m * vx) * x.vy +
        ((cr * lr - cf * lf) / (m * vx) - vx) * x.yaw_rate + cf / m * u.delta;
  dr = (cr * lr - cf * lf) / (izz * vx) * x.vy -
       (cf * lf * lf + cr * lr * lr) / (izz * vx) * x.yaw_rate + cf * lf / izz * u.delta;
}
}  // namespace

TEST_CASE("process derivative: equilibrium and linear-regime agreement") {
  const auto d0 = process_derivative(VehicleState{0.0, 0.0}, VehicleInput{20.0, 0.0}, kP, kTy);
  CHECK(d0.vy == 0.0);
  CHECK(d0.yaw_rate == 0.0);

  const VehicleState x{0.05, 0.02};
  const VehicleInput u{25.0, 0.004};
  const auto d = process_derivative(x, u, kP, kTy);
  double dvy, dr;
  linear_derivative(x, u, dvy, dr);
  CHECK(d.vy == doctest::Approx(dvy).epsilon(0.02));
  CHECK(d.yaw_rate == doctest::Approx(dr).epsilon(0.02));
}

TEST_CASE("process derivative: steady-state circle sits at the trim point") {
  // linear-model trim for small delta, solved directly here
  const double delta = 0.01, vx = 15.0;
  const double cf = kTy.cf, cr = kTy.cr, m = kP.m, izz = kP.izz, lf = kP.lf, lr = kP.lr;
  const double a11 = -(cf + cr) / (m * vx);
  const double a12 = (cr * lr - cf * lf) / (m * vx) - vx;
  const double a21 = (cr * lr - cf * lf) / (izz * vx);
  const double a22 = -(cf * lf * lf + cr * lr * lr) / (izz * vx);
  const double b1 = cf / m, b2 = cf * lf / izz;
  const double det = a11 * a22 - a12 * a21;
  const double vy_ss = (-b1 * delta * a22 + b2 * delta * a12) / det;
  const double r_ss = (-b2 * delta * a11 + b1 * delta * a21) / det;

  const auto d = process_derivative(VehicleState{vy_ss, r_ss}, VehicleInput{vx, delta}, kP, kTy);
  const double scale = cf * delta / m;
  CHECK(std::fabs(d.vy) < 0.02 * scale);
  CHECK(std::fabs(d.yaw_rate) < 0.02 * scale * lf * m / izz);
}

TEST_CASE("process derivative: mirror symmetry") {
  const VehicleState x{0.4, 0.25};
  const VehicleInput u{18.0, 0.07};
  const auto d = process_derivative(x, u, kP, kTy);
  const auto dm = process_derivative(VehicleState{-x.vy, -x.yaw_rate},
                                     VehicleInput{u.vx, -u.delta}, kP, kTy);
  CHECK(dm.vy == doctest::Approx(-d.vy).epsilon(1e-12));
  CHECK(dm.yaw_rate == doctest::Approx(-d.yaw_rate).epsilon(1e-12));
}

TEST_CASE("step_zoh: fixed point, Euler arithmetic, Richardson order") {
  const VehicleState still = step_zoh(VehicleState{0.0, 0.0}, VehicleInput{20.0, 0.0}, kP, kTy);
  CHECK(still.vy == 0.0);
  CHECK(still.yaw_rate == 0.0);

  // with zero state the derivative is pure steering force; check dt scaling
  const VehicleState x{0.0, 0.0};
  const VehicleInput u{20.0, 0.05};
  const auto d = process_derivative(x, u, kP, kTy);
  const auto x1 = step_zoh(x, u, kP, kTy);
  CHECK(x1.vy == doctest::Approx(d.vy * 0.01).epsilon(1e-15));
  CHECK(x1.yaw_rate == doctest::Approx(d.yaw_rate * 0.01).epsilon(1e-15));

  // noise enters dt-scaled
  const VehicleState xn = step_zoh(x, u, kP, kTy, VehicleState{1.0, 0.5});
  CHECK(xn.vy == doctest::Approx(x1.vy + 0.01).epsilon(1e-12));
  CHECK(xn.yaw_rate == doctest::Approx(x1.yaw_rate + 0.005).epsilon(1e-12));

  // halving dt for two sub-steps differs from one step by O(dt^2)
  VehicleParams half = kP;
  half.dt = 0.005;
  const VehicleState xs{0.3, 0.15};
  const VehicleInput us{22.0, 0.06};
  const auto one = step_zoh(xs, us, kP, kTy);
  const auto two = step_zoh(step_zoh(xs, us, half, kTy), us, half, kTy);
  CHECK(std::fabs(one.vy - two.vy) < 1e-3);
  CHECK(std::fabs(one.yaw_rate - two.yaw_rate) < 1e-3);
  CHECK(std::fabs(one.vy - two.vy) > 0.0);
}

TEST_CASE("observe: zeros, beta definition, force consistency") {
  const auto z0 = observe(VehicleState{0.0, 0.0}, VehicleInput{20.0, 0.0}, kP, kTy);
  CHECK(z0.ay == 0.0);
  CHECK(z0.fyf == 0.0);
  CHECK(z0.fyr == 0.0);
  CHECK(z0.beta_dd == 0.0);

  const auto z1 = observe(VehicleState{1.0, 0.0}, VehicleInput{20.0, 0.0}, kP, kTy);
  CHECK(z1.beta_dd == doctest::Approx(std::atan(0.05)).epsilon(1e-15));

  const auto z = observe(VehicleState{0.3, 0.2}, VehicleInput{18.0, 0.08}, kP, kTy);
  CHECK(kP.m * z.ay ==
        doctest::Approx(z.fyf * std::cos(0.08) + z.fyr).epsilon(1e-13));
  CHECK(z.yaw_rate == 0.2);
}

TEST_CASE("observability rank: five away from delta = k pi, deficient at k pi") {
  CHECK(observability_rank(VehicleState{0.3, 0.1}, VehicleInput{20.0, 0.1}, kP, kTy) == 5);
  CHECK(observability_rank(VehicleState{0.2, 0.1}, VehicleInput{20.0, 0.0}, kP, kTy) < 5);
  CHECK(observability_rank(VehicleState{0.3, 0.1}, VehicleInput{20.0, M_PI}, kP, kTy) < 5);
  CHECK(observability_rank(VehicleState{0.3, 0.1}, VehicleInput{0.0, 0.1}, kP, kTy) < 5);

  // generic cornering states; at the exact origin with unsaturated tyres
  // nothing depends on Vx and the honest rank is four
  Rng rng(1234);
  for (int i = 0; i < 50; ++i) {
    const double delta = (rng.uniform01() < 0.5 ? 1.0 : -1.0) * rng.uniform(0.01, 0.5);
    const double vy = (rng.uniform01() < 0.5 ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
    const double r = rng.uniform(-0.3, 0.3);
    const double vx = rng.uniform(5.0, 40.0);
    CHECK(observability_rank(VehicleState{vy, r}, VehicleInput{vx, delta}, kP, kTy) == 5);
  }
}

TEST_CASE("step and observe gradients pass the finite-difference check") {
  // leaves: vy, r, vx, delta, cf, cr, mu, eps_v
  std::vector<double> x0{0.3, 0.15, 18.0, 0.06, kTy.cf, kTy.cr, kTy.mu, kTy.eps_v};

  enum Out { kStepVy, kStepR, kAy, kFyf, kBeta };
  const auto eval = [&](std::span<const double> v, Out which) {
    const VehicleState x{v[0], v[1]};
    const VehicleInput u{v[2], v[3]};
    const TyreParams ty{v[4], v[5], v[6], v[7]};
    switch (which) {
      case kStepVy: return step_zoh(x, u, kP, ty).vy;
      case kStepR: return step_zoh(x, u, kP, ty).yaw_rate;
      case kAy: return observe(x, u, kP, ty).ay;
      case kFyf: return observe(x, u, kP, ty).fyf;
      case kBeta: return observe(x, u, kP, ty).beta_dd;
    }
    return 0.0;
  };

  for (Out which : {kStepVy, kStepR, kAy, kFyf, kBeta}) {
    CAPTURE(static_cast<int>(which));
    ad::Tape t;
    std::vector<ad::Tape::Id> ids;
    std::vector<ad::Var> leaves;
    for (double v : x0) {
      leaves.push_back(ad::leaf(t, v));
      ids.push_back(leaves.back().id());
    }
    const VehicleStateT<ad::Var> x{leaves[0], leaves[1]};
    const VehicleInputT<ad::Var> u{leaves[2], leaves[3]};
    const TyreParamsT<ad::Var> ty{leaves[4], leaves[5], leaves[6], leaves[7]};
    ad::Var out;
    switch (which) {
      case kStepVy: out = step_zoh(x, u, kP, ty).vy; break;
      case kStepR: out = step_zoh(x, u, kP, ty).yaw_rate; break;
      case kAy: out = observe(x, u, kP, ty).ay; break;
      case kFyf: out = observe(x, u, kP, ty).fyf; break;
      case kBeta: out = observe(x, u, kP, ty).beta_dd; break;
    }
    const ad::GradientVector g = t.gradient(out.id(), ids);
    auto f = [&](std::span<const double> v) { return eval(v, which); };
    CHECK(finite_difference_check(f, g.g, x0, 1e-6) < 1e-4);
  }
}

namespace {
// Skidpad-style samples straight from the single-track model with known
// tyre parameters; the fit should round-trip them.
Trajectory synth_skidpad(const TyreParams& truth, std::uint64_t seed) {
  Trajectory tr;
  tr.name = "skidpad";
  tr.kind = "skidpad";
  const int n = 600;
  tr.resize(n);
  Rng rng(seed);
  const double l = kP.lf + kP.lr;
  const double fzf = kP.m * 9.81 * kP.lr / l;
  const double fzr = kP.m * 9.81 * kP.lf / l;
  for (int i = 0; i < n; ++i) {
    const double vx = rng.uniform(10.0, 35.0);
    const double vy = rng.uniform(-1.5, 1.5);
    const double r = rng.uniform(-0.5, 0.5);
    const double delta = rng.uniform(-0.17, 0.17);
    const VehicleState x{vy, r};
    const VehicleInput u{vx, delta};
    const auto [af, ar] = slip_angles(x, u, kP);
    const double fyf = dugoff_lateral_force(af, fzf, vx, truth, truth.cf);
    const double fyr = dugoff_lateral_force(ar, fzr, vx, truth, truth.cr);
    tr.t[i] = i * 0.01;
    tr.vx[i] = vx;
    tr.delta[i] = delta;
    tr.yaw_rate[i] = r;
    tr.beta_me[i] = std::atan(vy / vx);
    tr.fy[kFL][i] = fyf / 2;
    tr.fy[kFR][i] = fyf / 2;
    tr.fy[kRL][i] = fyr / 2;
    tr.fy[kRR][i] = fyr / 2;
    tr.fz[kFL][i] = fzf / 2;
    tr.fz[kFR][i] = fzf / 2;
    tr.fz[kRL][i] = fzr / 2;
    tr.fz[kRR][i] = fzr / 2;
  }
  return tr;
}
}  // namespace

TEST_CASE("tyre fit round-trips known parameters") {
  const TyreParams truth{122000.0, 102000.0, 0.88, 0.012};
  const TyreFitResult fit = fit_tyre_params({synth_skidpad(truth, 77)}, kP, 5);
  CHECK_FALSE(fit.ill_conditioned);
  CHECK(fit.params.cf == doctest::Approx(truth.cf).epsilon(0.05));
  CHECK(fit.params.cr == doctest::Approx(truth.cr).epsilon(0.05));
  CHECK(fit.params.mu == doctest::Approx(truth.mu).epsilon(0.05));
  CHECK(fit.fitness < 100.0);
}

TEST_CASE("tyre fit flags a straight-line dataset and rejects empties") {
  Trajectory straight;
  straight.resize(200);
  for (int i = 0; i < 200; ++i) {
    straight.t[i] = i * 0.01;
    straight.vx[i] = 20.0;
    straight.fz[kFL][i] = 4700.0;
    straight.fz[kFR][i] = 4700.0;
    straight.fz[kRL][i] = 4900.0;
    straight.fz[kRR][i] = 4900.0;
  }
  const TyreFitResult fit = fit_tyre_params({straight}, kP, 1);
  CHECK(fit.ill_conditioned);

  CHECK_THROWS_AS(fit_tyre_params({}, kP), EmptyDataset);
}
