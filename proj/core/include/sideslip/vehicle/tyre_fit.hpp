#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/math/rng.hpp"
#include "sideslip/vehicle/model.hpp"

namespace sideslip {

struct TyreFitResult {
  TyreParams params;
  double fitness = 0.0;         // mean squared axle-force error, N^2
  bool ill_conditioned = false; // no lateral excitation: stiffness unconstrained
};

namespace detail {

struct FitSample {
  double alpha_f, alpha_r, fzf, fzr, vx;
  double fyf_meas, fyr_meas;
};

// Slip angles are reconstructible on a skidpad because the reference
// sideslip gives Vy = Vx tan(beta).
inline std::vector<FitSample> gather_fit_samples(const std::vector<Trajectory>& trajs,
                                                 const VehicleParams& p) {
  std::vector<FitSample> out;
  for (const Trajectory& tr : trajs)
    for (std::size_t i = 0; i < tr.size(); ++i) {
      if (tr.vx[i] < 1.0) continue;
      const double vy = tr.vx[i] * std::tan(tr.beta_me[i]);
      const VehicleState x{vy, tr.yaw_rate[i]};
      const VehicleInput u{tr.vx[i], tr.delta[i]};
      const auto [af, ar] = slip_angles(x, u, p);
      out.push_back({af, ar, axle_front(tr.fz, i), axle_rear(tr.fz, i), tr.vx[i],
                     axle_front(tr.fy, i), axle_rear(tr.fy, i)});
    }
  return out;
}

inline double fit_mse(const std::vector<FitSample>& samples, const TyreParams& ty) {
  double acc = 0.0;
  for (const FitSample& s : samples) {
    const double pf =
        dugoff_lateral_force(s.alpha_f, s.fzf, s.vx, ty, ty.cf) - s.fyf_meas;
    const double pr =
        dugoff_lateral_force(s.alpha_r, s.fzr, s.vx, ty, ty.cr) - s.fyr_meas;
    acc += pf * pf + pr * pr;
  }
  return acc / static_cast<double>(samples.size());
}

}  // namespace detail

// Offline identification of the axle tyre parameters from skidpad data.
// Plain generational GA: tournament parents, blend crossover, Gaussian
// mutation, small elite.
inline TyreFitResult fit_tyre_params(const std::vector<Trajectory>& skidpad,
                                     const VehicleParams& p, std::uint64_t seed = 0) {
  const std::vector<detail::FitSample> samples = detail::gather_fit_samples(skidpad, p);
  if (samples.empty()) throw EmptyDataset("tyre fit needs at least one usable skidpad sample");

  double max_slip = 0.0;
  for (const auto& s : samples)
    max_slip = std::max({max_slip, std::fabs(s.alpha_f), std::fabs(s.alpha_r)});

  constexpr int kPop = 64;
  constexpr int kGenerations = 100;
  constexpr int kTournament = 3;
  constexpr int kElite = 2;
  const double lo[4] = {2e4, 2e4, 0.3, 0.0};
  const double hi[4] = {4e5, 4e5, 1.2, 0.05};

  Rng rng(seed ^ 0x7942f1a3c0ffee00ULL);
  using Genome = std::array<double, 4>;
  std::vector<Genome> pop(kPop);
  for (Genome& g : pop)
    for (int k = 0; k < 4; ++k) g[k] = rng.uniform(lo[k], hi[k]);

  const auto eval = [&](const Genome& g) {
    return detail::fit_mse(samples, TyreParams{g[0], g[1], g[2], g[3]});
  };

  std::vector<double> fit(kPop);
  std::vector<int> order(kPop);
  for (int gen = 0; gen <= kGenerations; ++gen) {
    for (int i = 0; i < kPop; ++i) fit[i] = eval(pop[i]);
    for (int i = 0; i < kPop; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fit[a] < fit[b]; });
    if (gen == kGenerations) break;

    std::vector<Genome> next;
    next.reserve(kPop);
    for (int e = 0; e < kElite; ++e) next.push_back(pop[order[e]]);
    const auto tournament = [&]() -> const Genome& {
      int best = static_cast<int>(rng.below(kPop));
      for (int k = 1; k < kTournament; ++k) {
        const int c = static_cast<int>(rng.below(kPop));
        if (fit[c] < fit[best]) best = c;
      }
      return pop[best];
    };
    while (static_cast<int>(next.size()) < kPop) {
      const Genome& a = tournament();
      const Genome& b = tournament();
      Genome child;
      for (int k = 0; k < 4; ++k) {
        const double w = rng.uniform01();
        child[k] = w * a[k] + (1.0 - w) * b[k];
        if (rng.uniform01() < 0.3) child[k] += rng.gauss() * 0.08 * (hi[k] - lo[k]);
        child[k] = std::clamp(child[k], lo[k], hi[k]);
      }
      next.push_back(child);
    }
    pop.swap(next);
  }

  TyreFitResult res;
  const Genome& best = pop[order[0]];
  res.params = TyreParams{best[0], best[1], best[2], best[3]};
  res.fitness = fit[order[0]];
  res.ill_conditioned = max_slip < 0.005;  // ~0.3 deg: no lateral excitation
  return res;
}

}  // namespace sideslip
