#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <vector>

#include "sideslip/baselines/adaptive_ukf.hpp"
#include "sideslip/baselines/data_driven.hpp"
#include "sideslip/baselines/de_ukf.hpp"
#include "sideslip/data/filtering.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/filter/run_filter.hpp"
#include "sideslip/math/gradcheck.hpp"
#include "sideslip/math/rng.hpp"
#include "sideslip/net/network.hpp"
#include "sideslip/vehicle/model.hpp"

using namespace sideslip;

namespace {

// Closed-loop single-track run whose channels are exactly the model's own
// observations, so the filter sees dynamically consistent data.
Trajectory consistent_manoeuvre(std::size_t n, double amp, double freq, std::uint64_t seed) {
  const VehicleParams vp;
  const TyreParams ty = default_tyre_params();
  Trajectory tr;
  tr.resize(n);
  tr.seed = seed;
  Rng rng(seed);
  const double vx = rng.uniform(16.0, 24.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto [fzf, fzr] = axle_normal_loads(0.0, vp);

  VehicleState x{0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = vp.dt * static_cast<double>(i);
    const VehicleInput u{vx, amp * std::sin(2.0 * std::numbers::pi * freq * t + phase)};
    const Observation ob = observe(x, u, vp, ty);
    tr.t[i] = t;
    tr.ax[i] = 0.0;
    tr.ay[i] = ob.ay;
    tr.vx[i] = vx;
    tr.delta[i] = u.delta;
    tr.yaw_rate[i] = ob.yaw_rate;
    for (int w = 0; w < 4; ++w) {
      tr.fx[w][i] = 0.0;
      tr.fy[w][i] = (w < 2 ? ob.fyf : ob.fyr) * 0.5;
      tr.fz[w][i] = (w < 2 ? fzf : fzr) * 0.5;
    }
    tr.beta_me[i] = ob.beta_dd;
    x = step_zoh(x, u, vp, ty);
  }
  return tr;
}

// Single smooth steering bump: |ay| rises through any band once and falls
// back through it once, so gate transitions are unambiguous.
Trajectory lobe_manoeuvre(std::size_t n, double peak, double vx) {
  const VehicleParams vp;
  const TyreParams ty = default_tyre_params();
  Trajectory tr;
  tr.resize(n);
  const auto [fzf, fzr] = axle_normal_loads(0.0, vp);
  const double t_on = 1.0, t_off = 5.0;

  VehicleState x{0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = vp.dt * static_cast<double>(i);
    double d = 0.0;
    if (t >= t_on && t < t_off)
      d = peak * std::sin(std::numbers::pi * (t - t_on) / (t_off - t_on));
    const VehicleInput u{vx, d};
    const Observation ob = observe(x, u, vp, ty);
    tr.t[i] = t;
    tr.ax[i] = 0.0;
    tr.ay[i] = ob.ay;
    tr.vx[i] = vx;
    tr.delta[i] = d;
    tr.yaw_rate[i] = ob.yaw_rate;
    for (int w = 0; w < 4; ++w) {
      tr.fx[w][i] = 0.0;
      tr.fy[w][i] = (w < 2 ? ob.fyf : ob.fyr) * 0.5;
      tr.fz[w][i] = (w < 2 ? fzf : fzr) * 0.5;
    }
    tr.beta_me[i] = ob.beta_dd;
    x = step_zoh(x, u, vp, ty);
  }
  return tr;
}

// Constant steering, settled tail only: the recorded sideslip is flat, so a
// constant-output network can reproduce it exactly.
Trajectory steady_tail(double delta, double vx, std::size_t warm, std::size_t keep) {
  const VehicleParams vp;
  const TyreParams ty = default_tyre_params();
  Trajectory tr;
  tr.resize(warm + keep);
  const auto [fzf, fzr] = axle_normal_loads(0.0, vp);
  VehicleState x{0.0, 0.0};
  for (std::size_t i = 0; i < warm + keep; ++i) {
    const VehicleInput u{vx, delta};
    const Observation ob = observe(x, u, vp, ty);
    tr.t[i] = vp.dt * static_cast<double>(i);
    tr.ax[i] = 0.0;
    tr.ay[i] = ob.ay;
    tr.vx[i] = vx;
    tr.delta[i] = delta;
    tr.yaw_rate[i] = ob.yaw_rate;
    for (int w = 0; w < 4; ++w) {
      tr.fx[w][i] = 0.0;
      tr.fy[w][i] = (w < 2 ? ob.fyf : ob.fyr) * 0.5;
      tr.fz[w][i] = (w < 2 ? fzf : fzr) * 0.5;
    }
    tr.beta_me[i] = ob.beta_dd;
    x = step_zoh(x, u, vp, ty);
  }
  return slice(tr, warm, warm + keep);
}

// Band-limited channels (well under the reference filter cutoff) whose
// sideslip is an exact linear map of three of them, so the filtered
// reference stays the same map and the toy is learnable to the floor.
Trajectory linear_map_traj(std::size_t n, std::uint64_t seed) {
  Trajectory tr;
  tr.resize(n);
  tr.seed = seed;
  Rng rng(seed);
  double f[5], ph[5], a[5];
  for (int c = 0; c < 5; ++c) {
    f[c] = rng.uniform(0.1, 1.2);
    ph[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    a[c] = rng.uniform(0.5, 1.0);
  }
  const double vx0 = rng.uniform(12.0, 28.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 0.01 * static_cast<double>(i);
    const auto osc = [&](int c) {
      return a[c] * std::sin(2.0 * std::numbers::pi * f[c] * t + ph[c]);
    };
    tr.t[i] = t;
    tr.ax[i] = 2.5 * osc(0);
    tr.ay[i] = 7.0 * osc(1);
    tr.vx[i] = vx0 + 3.0 * osc(2);
    tr.delta[i] = 0.1 * osc(3);
    tr.yaw_rate[i] = 0.4 * osc(4);
    for (int w = 0; w < 4; ++w) {
      tr.fx[w][i] = 300.0 * osc(w % 2);
      tr.fy[w][i] = 2000.0 * osc(1);
      tr.fz[w][i] = 4800.0 + 500.0 * osc(2);
    }
    tr.beta_me[i] = 0.004 * tr.ay[i] + 0.06 * tr.delta[i] - 0.02 * tr.yaw_rate[i];
  }
  return tr;
}

std::vector<Trajectory> linear_map_set(std::size_t count, std::size_t n, std::uint64_t seed0) {
  std::vector<Trajectory> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(linear_map_traj(n, seed0 + k));
  return out;
}

// Constant-output member: all weights zero, the mean head pinned to `mu`.
NetworkParams constant_member(double mu, const Scaler& sc) {
  NetworkParams p = xavier_init(std::vector<int>{17, 8, 4, 2}, 1);
  for (auto& layer : p.w) std::fill(layer.begin(), layer.end(), 0.0);
  for (auto& layer : p.b) std::fill(layer.begin(), layer.end(), 0.0);
  p.b.back()[0] = mu;
  p.scaler = sc;
  return p;
}

EnsembleParams constant_ensemble(std::span<const double> mus, const Scaler& sc) {
  EnsembleParams e;
  for (double mu : mus) e.members.push_back(constant_member(mu, sc));
  return e;
}

double pooled_mse(std::span<const double> est, std::span<const double> ref) {
  REQUIRE(est.size() == ref.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double d = est[i] - ref[i];
    acc += d * d;
  }
  return acc / static_cast<double>(est.size());
}

}  // namespace

TEST_CASE("hysteresis gate: band semantics, chattering immunity, bad bands rejected") {
  HysteresisGate g;
  CHECK(g.engage == 4.0);
  CHECK(g.release == 3.5);
  CHECK(g.reduction == 5.0);
  CHECK_FALSE(g.engaged);

  // Inside the band before any engage: off stays off.
  for (double ay : {3.6, 3.9, 3.7, 3.99, 3.51}) CHECK_FALSE(g.update(ay));

  // Threshold values belong to the "on" side of each comparison.
  CHECK(g.update(4.0));
  CHECK(g.update(3.5));

  // Inside the band after the engage: on stays on, however it oscillates.
  int transitions = 0;
  bool prev = g.engaged;
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const bool now = g.update(rng.uniform(3.51, 3.99));
    if (now != prev) ++transitions;
    prev = now;
  }
  CHECK(transitions == 0);
  CHECK(g.engaged);

  // Below release: off; sign is ignored.
  CHECK_FALSE(g.update(3.49));
  CHECK(g.update(-4.2));
  CHECK_FALSE(g.update(-1.0));

  // A full pass over a recorded path is replay-stable.
  std::vector<double> path;
  Rng prng(29);
  for (int i = 0; i < 500; ++i) path.push_back(prng.uniform(-6.0, 6.0));
  std::vector<bool> first, second;
  HysteresisGate g1, g2;
  for (double ay : path) first.push_back(g1.update(ay));
  for (double ay : path) second.push_back(g2.update(ay));
  CHECK(first == second);

  HysteresisGate bad;
  bad.release = bad.engage;
  CHECK_THROWS_AS(bad.update(0.0), NonPositiveInput);
}

TEST_CASE("adaptive run is bit-identical to the plain filter while the gate never fires") {
  const Trajectory tr = consistent_manoeuvre(600, 0.012, 0.5, 41);
  HysteresisGate gate;
  double peak = 0.0;
  for (double ay : tr.ay) peak = std::max(peak, std::fabs(ay));
  REQUIRE(peak < gate.release);

  const VehicleParams vp;
  const TyreParams ty = default_tyre_params();
  const NoiseParams base = default_noise_params();
  const AdaptiveRun ar = adaptive_ukf_run(tr, base, gate, vp, ty);
  const RunResult plain = run_filter(
      tr, [&](std::size_t) { return base; }, {}, four_channel_mask(), vp, ty);

  CHECK(std::none_of(ar.engaged.begin(), ar.engaged.end(), [](std::uint8_t e) { return e != 0; }));
  CHECK(ar.run.beta_hat == plain.beta_hat);
  CHECK(ar.run.vy_hat == plain.vy_hat);
  CHECK(ar.run.cov_trace == plain.cov_trace);
}

TEST_CASE("adaptive run: one engage and one release across a single lobe") {
  const Trajectory tr = lobe_manoeuvre(700, 0.05, 22.0);
  HysteresisGate gate;
  double peak = 0.0;
  for (double ay : tr.ay) peak = std::max(peak, std::fabs(ay));
  REQUIRE(peak > gate.engage + 0.5);
  REQUIRE(std::fabs(tr.ay.back()) < gate.release - 0.5);

  const VehicleParams vp;
  const TyreParams ty = default_tyre_params();
  const NoiseParams base = default_noise_params();
  const AdaptiveRun ar = adaptive_ukf_run(tr, base, gate, vp, ty);

  // Independent scan of the recorded lateral acceleration.
  std::vector<std::uint8_t> want(tr.size());
  bool on = false;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double a = std::fabs(tr.ay[i]);
    on = on ? (a >= gate.release) : (a >= gate.engage);
    want[i] = on ? 1 : 0;
  }
  CHECK(ar.engaged == want);

  int engages = 0, releases = 0;
  for (std::size_t i = 1; i < want.size(); ++i) {
    if (want[i] && !want[i - 1]) ++engages;
    if (!want[i] && want[i - 1]) ++releases;
  }
  CHECK(engages == 1);
  CHECK(releases == 1);

  // The reduced tyre-force stds must actually move the estimate.
  const RunResult plain = run_filter(
      tr, [&](std::size_t) { return base; }, {}, four_channel_mask(), vp, ty);
  double diff = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i)
    diff = std::max(diff, std::fabs(ar.run.beta_hat[i] - plain.beta_hat[i]));
  CHECK(diff > 0.0);

  // Replay stability.
  const AdaptiveRun again = adaptive_ukf_run(tr, base, gate, vp, ty);
  CHECK(again.engaged == ar.engaged);
  CHECK(again.run.beta_hat == ar.run.beta_hat);
}

TEST_CASE("scalar regression batch: loss closed form and FD gradient oracle") {
  const std::vector<int> sizes{17, 8, 6, 1};
  const NetworkParams p = xavier_init(sizes, 3);
  const std::size_t bsz = 16;
  Rng rng(8);
  std::vector<double> xs(bsz * kNetInputs), y(bsz);
  for (auto& v : xs) v = rng.uniform(0.0, 1.0);
  for (auto& v : y) v = rng.uniform(-0.05, 0.05);

  const BatchGrad bg = mse_batch(p, xs, y, nullptr);

  double want = 0.0;
  for (std::size_t i = 0; i < bsz; ++i) {
    double raw[1];
    forward_raw(std::span<const double>(xs.data() + i * kNetInputs, kNetInputs), p, false, nullptr,
                raw);
    const double d = y[i] - raw[0];
    want += d * d / static_cast<double>(bsz);
  }
  CHECK(bg.loss == doctest::Approx(want).epsilon(1e-12));

  auto theta = flatten(p);
  NetworkParams scratch = p;
  const double err = finite_difference_check(
      [&](std::span<const double> th) {
        assign_flat(scratch, th);
        double l = 0.0;
        for (std::size_t i = 0; i < bsz; ++i) {
          double raw[1];
          forward_raw(std::span<const double>(xs.data() + i * kNetInputs, kNetInputs), scratch,
                      false, nullptr, raw);
          const double d = y[i] - raw[0];
          l += d * d / static_cast<double>(bsz);
        }
        return l;
      },
      bg.grad, std::span<double>(theta), 1e-5);
  CHECK(err < 1e-4);

  // Same dropout stream, same loss; different stream, different loss.
  Rng d1(33), d2(33), d3(34);
  CHECK(mse_batch(p, xs, y, &d1).loss == mse_batch(p, xs, y, &d2).loss);
  CHECK(mse_batch(p, xs, y, &d1).loss != mse_batch(p, xs, y, &d3).loss);
}

TEST_CASE("heteroscedastic batch: loss closed form and FD gradient oracle") {
  const std::vector<int> sizes{17, 8, 6, 2};
  const NetworkParams p = xavier_init(sizes, 3);
  const std::size_t bsz = 16;
  Rng rng(8);
  std::vector<double> xs(bsz * kNetInputs), y(bsz);
  for (auto& v : xs) v = rng.uniform(0.0, 1.0);
  for (auto& v : y) v = rng.uniform(-0.05, 0.05);

  const BatchGrad bg = nll_batch(p, xs, y, nullptr);

  double want = 0.0;
  for (std::size_t i = 0; i < bsz; ++i) {
    double raw[2];
    forward_raw(std::span<const double>(xs.data() + i * kNetInputs, kNetInputs), p, false, nullptr,
                raw);
    const double var = std::log1p(std::exp(raw[1])) + kVarianceFloor;
    const double d = y[i] - raw[0];
    want += 0.5 * (std::log(var) + d * d / var) / static_cast<double>(bsz);
  }
  CHECK(bg.loss == doctest::Approx(want).epsilon(1e-12));

  auto theta = flatten(p);
  NetworkParams scratch = p;
  const double err = finite_difference_check(
      [&](std::span<const double> th) {
        assign_flat(scratch, th);
        double l = 0.0;
        for (std::size_t i = 0; i < bsz; ++i) {
          double raw[2];
          forward_raw(std::span<const double>(xs.data() + i * kNetInputs, kNetInputs), scratch,
                      false, nullptr, raw);
          const double var = std::log1p(std::exp(raw[1])) + kVarianceFloor;
          const double d = y[i] - raw[0];
          l += 0.5 * (std::log(var) + d * d / var) / static_cast<double>(bsz);
        }
        return l;
      },
      bg.grad, std::span<double>(theta), 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("scalar baseline learns a linear map to below 1e-4 rad^2") {
  const auto train_set = linear_map_set(8, 700, 500);
  const auto val_set = linear_map_set(2, 700, 900);
  const auto test_set = linear_map_set(2, 700, 950);

  BaselineConfig cfg;
  cfg.sizes = {17, 32, 16, 1};
  cfg.batch = 256;
  cfg.max_epochs = 400;
  cfg.seed = 5;
  const BaselineTrainResult r = ffnn_baseline_train(train_set, val_set, cfg);

  CHECK(baseline_mse(r.params, test_set) < 1e-4);

  // Bitwise reproducible from the config alone.
  const BaselineTrainResult r2 = ffnn_baseline_train(train_set, val_set, cfg);
  CHECK(flatten(r.params) == flatten(r2.params));
  REQUIRE(r2.history.size() == r.history.size());
  CHECK(r2.history.back().val_loss == r.history.back().val_loss);
}

TEST_CASE("scalar baseline stops within patience of its best epoch and keeps that checkpoint") {
  // Noisy validation targets put a floor under the val loss, so improvements
  // dry up and the patience window closes well before the epoch cap.
  const auto train_set = linear_map_set(2, 400, 300);
  auto val_set = linear_map_set(1, 400, 310);
  Rng noise(77);
  for (auto& v : val_set[0].beta_me) v += noise.gauss(0.0, 0.02);

  BaselineConfig cfg;
  cfg.sizes = {17, 32, 16, 1};
  cfg.max_epochs = 150;
  cfg.patience = 10;
  cfg.seed = 6;
  const BaselineTrainResult r = ffnn_baseline_train(train_set, val_set, cfg);

  REQUIRE(!r.history.empty());
  int best_epoch = r.history.front().epoch;
  double best_val = r.history.front().val_loss;
  for (const EpochRow& row : r.history)
    if (row.val_loss < best_val) {
      best_val = row.val_loss;
      best_epoch = row.epoch;
    }
  CHECK(r.history.back().epoch < cfg.max_epochs);
  CHECK(r.history.back().epoch - best_epoch <= cfg.patience + 1);

  // The returned parameters are the best-validation checkpoint, not the last.
  CHECK(baseline_mse(r.params, val_set) == doctest::Approx(best_val).epsilon(1e-12));
}

TEST_CASE("ensemble aggregation arithmetic") {
  Scaler sc;
  sc.lo.fill(0.0);
  sc.hi.fill(1.0);

  // Twenty identical members carry no spread. The constant is a power of
  // two so the mean comes out exact and the variance is exactly zero.
  std::vector<double> same(kEnsembleMembers, 0.03125);
  const EnsembleParams degenerate = constant_ensemble(same, sc);
  double x[kNetInputs] = {};
  const DePrediction d0 = de_predict(std::span<const double>(x, kNetInputs), degenerate);
  CHECK(d0.beta_dd == 0.03125);
  CHECK(d0.sigma_dd == 0.0);

  // Half at 0, half at 0.1: mean 0.05, population variance 0.0025.
  std::vector<double> split(kEnsembleMembers, 0.0);
  for (std::size_t k = 10; k < kEnsembleMembers; ++k) split[k] = 0.1;
  const EnsembleParams halves = constant_ensemble(split, sc);
  const DePrediction d1 = de_predict(std::span<const double>(x, kNetInputs), halves);
  CHECK(d1.beta_dd == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(d1.sigma_dd == doctest::Approx(0.0025).epsilon(1e-12));

  // Member order does not matter.
  EnsembleParams shuffled = halves;
  Rng rng(3);
  for (std::size_t i = shuffled.members.size(); i > 1; --i)
    std::swap(shuffled.members[i - 1], shuffled.members[rng.below(i)]);
  const DePrediction d2 = de_predict(std::span<const double>(x, kNetInputs), shuffled);
  CHECK(d2.beta_dd == doctest::Approx(d1.beta_dd).epsilon(1e-12));
  CHECK(d2.sigma_dd == doctest::Approx(d1.sigma_dd).epsilon(1e-12));

  // Anything but the fixed member count is rejected.
  EnsembleParams short_e = halves;
  short_e.members.pop_back();
  CHECK_THROWS_AS(de_predict(std::span<const double>(x, kNetInputs), short_e), LengthMismatch);

  // Per-trajectory aggregation is the pointwise rule applied at every step.
  const Trajectory tr = linear_map_traj(50, 11);
  const EnsembleOutputs outs = ensemble_outputs(tr, halves);
  REQUIRE(outs.beta_dd.size() == tr.size());
  double xin[kNetInputs];
  for (std::size_t i = 0; i < tr.size(); i += 7) {
    net_input(tr, i, xin);
    const DePrediction di = de_predict(std::span<const double>(xin, kNetInputs), halves);
    CHECK(outs.beta_dd[i] == di.beta_dd);
    CHECK(outs.sigma_dd[i] == di.sigma_dd);
  }
}

TEST_CASE("ensemble training: member mean beats the median member on held-out data") {
  const auto train_set = linear_map_set(4, 600, 1200);
  const auto held_out = linear_map_set(2, 600, 1300);

  EnsembleConfig cfg;
  cfg.sizes = {17, 32, 16, 2};
  cfg.epochs = 12;
  cfg.seed = 9;
  const EnsembleParams e = de_train(train_set, cfg);
  REQUIRE(e.members.size() == kEnsembleMembers);

  // Members differ (distinct seeds reached distinct weights).
  CHECK(flatten(e.members[0]) != flatten(e.members[1]));

  // Held-out comparison: pooled ensemble MSE vs each member's own MSE.
  std::vector<double> ref_all, ens_all;
  std::vector<std::vector<double>> member_all(kEnsembleMembers);
  for (const Trajectory& tr : held_out) {
    const auto ref = zero_phase_lowpass(tr.beta_me);
    ref_all.insert(ref_all.end(), ref.begin(), ref.end());
    const EnsembleOutputs outs = ensemble_outputs(tr, e);
    ens_all.insert(ens_all.end(), outs.beta_dd.begin(), outs.beta_dd.end());
    double xin[kNetInputs], xn[kNetInputs];
    for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
      for (std::size_t i = 0; i < tr.size(); ++i) {
        net_input(tr, i, xin);
        normalize(xin, e.members[k].scaler, xn);
        double raw[2];
        forward_raw(std::span<const double>(xn, kNetInputs), e.members[k], false, nullptr, raw);
        member_all[k].push_back(raw[0]);
      }
    }
  }
  const double ens_mse = pooled_mse(ens_all, ref_all);
  std::vector<double> member_mse;
  for (std::size_t k = 0; k < kEnsembleMembers; ++k)
    member_mse.push_back(pooled_mse(member_all[k], ref_all));
  std::nth_element(member_mse.begin(), member_mse.begin() + kEnsembleMembers / 2,
                   member_mse.end());
  CHECK(ens_mse <= member_mse[kEnsembleMembers / 2]);

  // Bitwise reproducible.
  const EnsembleParams e2 = de_train(train_set, cfg);
  for (std::size_t k = 0; k < kEnsembleMembers; ++k)
    CHECK(flatten(e.members[k]) == flatten(e2.members[k]));
}

TEST_CASE("ensemble io roundtrip") {
  Scaler sc;
  sc.lo.fill(-1.0);
  sc.hi.fill(2.0);
  std::vector<double> mus(kEnsembleMembers);
  for (std::size_t k = 0; k < kEnsembleMembers; ++k)
    mus[k] = 0.01 * static_cast<double>(k) - 0.1;
  EnsembleParams e = constant_ensemble(mus, sc);
  e.p1 = -4.2690;
  e.p2 = 0.7901;

  const std::string dir = (std::filesystem::temp_directory_path() / "ens_rt").string();
  std::filesystem::remove_all(dir);
  save_ensemble(e, dir);
  const EnsembleParams back = load_ensemble(dir);

  CHECK(back.p1 == e.p1);
  CHECK(back.p2 == e.p2);
  REQUIRE(back.members.size() == kEnsembleMembers);
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    CHECK(flatten(back.members[k]) == flatten(e.members[k]));
    CHECK(back.members[k].scaler.lo == e.members[k].scaler.lo);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("distrust scaling: closed forms, identity, monotonicity, domain") {
  CHECK(scale_distrust(1.0, -4.2690, 0.7901) ==
        doctest::Approx(std::pow(10.0, -4.2690)).epsilon(1e-12));
  CHECK(scale_distrust(1.0, -1.4353, 1.465) ==
        doctest::Approx(std::pow(10.0, -1.4353)).epsilon(1e-12));

  // p1 = 0, p2 = 1 is the identity.
  for (double s : {1e-6, 0.02, 1.0, 3.7, 250.0})
    CHECK(scale_distrust(s, 0.0, 1.0) == doctest::Approx(s).epsilon(1e-15));

  // Strictly increasing in sigma for positive p2.
  double prev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double s = std::pow(10.0, -6.0 + 7.0 * static_cast<double>(i) / 999.0);
    const double v = scale_distrust(s, -1.2, 0.7901);
    if (i > 0) CHECK(v > prev);
    prev = v;
  }

  CHECK_THROWS_AS(scale_distrust(0.0, -1.0, 0.5), NonPositiveInput);
  CHECK_THROWS_AS(scale_distrust(-0.3, -1.0, 0.5), NonPositiveInput);
  CHECK_THROWS_AS(scale_distrust(std::nan(""), -1.0, 0.5), NonPositiveInput);
}

TEST_CASE("infinite distrust reduces the fused filter to the four-channel one") {
  const Trajectory tr = consistent_manoeuvre(800, 0.04, 0.4, 57);
  const Scaler sc = fit_scaler(std::span<const Trajectory>(&tr, 1));

  // Constant members with a visible spread; the pair (p1, p2) drives the
  // pseudo-measurement std from dominant to negligible.
  std::vector<double> mus(kEnsembleMembers);
  for (std::size_t k = 0; k < kEnsembleMembers; ++k)
    mus[k] = 0.01 + 0.002 * static_cast<double>(k);
  EnsembleParams e = constant_ensemble(mus, sc);

  const VehicleParams vp;
  const TyreParams ty = default_tyre_params();
  const NoiseParams base = default_noise_params();
  const RunResult plain = run_filter(
      tr, [&](std::size_t) { return base; }, {}, four_channel_mask(), vp, ty);

  e.p1 = 12.0;
  e.p2 = 1.0;
  const DeUkfRun far = de_ukf_run(tr, e, base, vp, ty);
  double dmax = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i)
    dmax = std::max(dmax, std::fabs(far.run.beta_hat[i] - plain.beta_hat[i]));
  CHECK(dmax < 1e-6);

  // Per-step scaled stds are exactly the scaling law applied to the spread.
  for (std::size_t i = 0; i < tr.size(); i += 97)
    CHECK(far.sigma_scaled[i] == scale_distrust(far.net.sigma_dd[i], e.p1, e.p2));

  // At moderate distrust the pseudo-measurement visibly pulls the estimate.
  e.p1 = -4.0;
  const DeUkfRun near = de_ukf_run(tr, e, base, vp, ty);
  double moved = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i)
    moved = std::max(moved, std::fabs(near.run.beta_hat[i] - plain.beta_hat[i]));
  CHECK(moved > 1e-4);

  // A collapsed ensemble has no spread to scale (power-of-two constant so
  // the population variance is exactly zero).
  std::vector<double> same(kEnsembleMembers, 0.03125);
  EnsembleParams flat = constant_ensemble(same, sc);
  flat.p1 = -4.0;
  flat.p2 = 1.0;
  CHECK_THROWS_AS(de_ukf_run(tr, flat, base, vp, ty), NonPositiveInput);
}

TEST_CASE("scaling tuner separates trustworthy and worthless ensembles") {
  // Settled constant-steering tail with sensor noise: the plain filter is
  // mediocre there, so a correct pseudo-measurement is decisively useful and
  // a wrong one decisively harmful.
  Trajectory tr = steady_tail(0.05, 20.0, 400, 800);
  const double beta_ss = tr.beta_me.back();
  Rng noise(2027);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    tr.ay[i] += noise.gauss(0.0, 0.15);
    tr.yaw_rate[i] += noise.gauss(0.0, 0.01);
    for (int w = 0; w < 4; ++w) tr.fy[w][i] += noise.gauss(0.0, 150.0);
  }
  NoiseParams base = default_noise_params();
  base.r_ay = 0.15;
  base.r_yawrate = 0.01;
  base.r_fyf = 300.0;
  base.r_fyr = 300.0;

  const Scaler sc = fit_scaler(std::span<const Trajectory>(&tr, 1));
  const VehicleParams vp;
  const TyreParams ty = default_tyre_params();

  // Members that agree tightly on the true value.
  std::vector<double> good(kEnsembleMembers), bad(kEnsembleMembers);
  Rng jit(5);
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    good[k] = beta_ss + jit.uniform(-0.001, 0.001);
    bad[k] = beta_ss + 0.15 + jit.uniform(-0.3, 0.3);
  }
  const EnsembleParams trusty = constant_ensemble(good, sc);
  const EnsembleParams worthless = constant_ensemble(bad, sc);

  const std::span<const Trajectory> val(&tr, 1);
  const TuneResult tg = tune_scaling(val, trusty, base, vp, ty);
  const TuneResult tb = tune_scaling(val, worthless, base, vp, ty);

  CHECK(tg.p1 >= -6.0);
  CHECK(tg.p1 <= 0.0);
  CHECK(tg.p2 >= 0.1);
  CHECK(tg.p2 <= 2.0);

  // Effective distrust at each ensemble's own spread: low when the members
  // are right, high when they are wrong.
  const auto spread = [&](const EnsembleParams& e) {
    const EnsembleOutputs outs = ensemble_outputs(tr, e);
    return outs.sigma_dd[outs.sigma_dd.size() / 2];
  };
  const double eff_good = scale_distrust(spread(trusty), tg.p1, tg.p2);
  const double eff_bad = scale_distrust(spread(worthless), tb.p1, tb.p2);
  CHECK(eff_good < 1e-3);
  CHECK(eff_bad > 100.0 * eff_good);

  // The trusted ensemble clearly beats the plain filter. The worthless one
  // cannot (the search box caps how far distrust can go), but tuning it must
  // end far from the trusting regime: much better than naively believing the
  // garbage, and within a small factor of the plain filter.
  const RunResult plain = run_filter(
      tr, [&](std::size_t) { return base; }, {}, four_channel_mask(), vp, ty);
  const auto ref = zero_phase_lowpass(tr.beta_me);
  const double plain_mse = pooled_mse(plain.beta_hat, ref);
  CHECK(tg.val_mse < 0.5 * plain_mse);

  EnsembleParams naive = worthless;
  naive.p1 = -4.0;
  naive.p2 = 0.7901;
  const DeUkfRun trusted_garbage = de_ukf_run(tr, naive, base, vp, ty);
  const double naive_mse = pooled_mse(trusted_garbage.run.beta_hat, ref);
  CHECK(tb.val_mse < 0.25 * naive_mse);
  CHECK(tb.val_mse < 3.0 * plain_mse);
  CHECK(tg.val_mse < tb.val_mse);

  // The two optima are different operating points.
  CHECK((std::fabs(tg.p1 - tb.p1) > 1e-9 || std::fabs(tg.p2 - tb.p2) > 1e-9));

  // Deterministic for a fixed seed.
  const TuneResult tg2 = tune_scaling(val, trusty, base, vp, ty);
  CHECK(tg2.p1 == tg.p1);
  CHECK(tg2.p2 == tg.p2);
}
