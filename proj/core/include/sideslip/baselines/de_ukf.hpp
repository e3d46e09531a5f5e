#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sideslip/baselines/data_driven.hpp"
#include "sideslip/data/filtering.hpp"
#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/filter/run_filter.hpp"
#include "sideslip/math/rng.hpp"

namespace sideslip {

// Maps ensemble disagreement to the pseudo-measurement noise handed to the
// filter: 10^p1 * sigma_dd^p2. Strictly increasing in sigma_dd for p2 > 0,
// so larger disagreement always means less trust.
inline double scale_distrust(double sigma_dd, double p1, double p2) {
  if (!(sigma_dd > 0.0)) throw NonPositiveInput("scale_distrust: spread must be positive");
  return std::pow(10.0, p1) * std::pow(sigma_dd, p2);
}

struct DeUkfRun {
  RunResult run;
  EnsembleOutputs net;
  std::vector<double> sigma_scaled;
};

// Loosely coupled fusion: the ensemble mean enters the filter as a fifth
// measurement channel whose noise level follows the scaled disagreement,
// so the filter leans on the network only where the members agree.
inline DeUkfRun de_ukf_run(const Trajectory& tr, const EnsembleParams& e, const NoiseParams& base,
                           const VehicleParams& vp, const TyreParams& ty, const UtParams& ut = {}) {
  DeUkfRun out;
  out.net = ensemble_outputs(tr, e);
  const std::size_t n = tr.size();
  out.sigma_scaled.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.sigma_scaled[i] = scale_distrust(out.net.sigma_dd[i], e.p1, e.p2);

  auto noise_at = [&](std::size_t i) {
    NoiseParams np = base;
    np.sigma_dd = out.sigma_scaled[i];
    return np;
  };
  out.run = run_filter(tr, noise_at, out.net.beta_dd, ObservationMask{}, vp, ty, ut);
  return out;
}

struct TuneConfig {
  int draws = 256;         // global random-search budget
  int refine_rounds = 3;   // shrinking local boxes around the incumbent
  int refine_draws = 32;
  std::uint64_t seed = 0;
  double p1_lo = -6.0, p1_hi = 0.0;
  double p2_lo = 0.1, p2_hi = 2.0;
};

struct TuneResult {
  double p1;
  double p2;
  double val_mse;  // pooled squared sideslip error at the optimum
};

// Bounded random search plus shrinking local refinement over the scaling
// pair, minimising the fused filter's pooled validation sideslip MSE. The
// ensemble forwards are hoisted out of the objective so each evaluation
// costs only the filter runs.
inline TuneResult tune_scaling(std::span<const Trajectory> val_set, const EnsembleParams& e,
                               const NoiseParams& base, const VehicleParams& vp,
                               const TyreParams& ty, const TuneConfig& cfg = {},
                               const UtParams& ut = {}) {
  detail::require_full(e, "tune_scaling");
  if (val_set.empty()) throw EmptySplit("tune_scaling: empty split");

  struct Prepared {
    const Trajectory* tr;
    EnsembleOutputs net;
    std::vector<double> ref;
  };
  std::vector<Prepared> prep;
  prep.reserve(val_set.size());
  std::size_t total = 0;
  for (const Trajectory& tr : val_set) {
    prep.push_back({&tr, ensemble_outputs(tr, e), zero_phase_lowpass(tr.beta_me)});
    total += tr.size();
  }

  std::vector<double> sigma;
  auto objective = [&](double p1, double p2) {
    double acc = 0.0;
    for (const Prepared& pr : prep) {
      const std::size_t n = pr.tr->size();
      sigma.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        sigma[i] = scale_distrust(pr.net.sigma_dd[i], p1, p2);
      auto noise_at = [&](std::size_t i) {
        NoiseParams np = base;
        np.sigma_dd = sigma[i];
        return np;
      };
      const RunResult run = run_filter(*pr.tr, noise_at, pr.net.beta_dd, ObservationMask{}, vp, ty, ut);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = run.beta_hat[i] - pr.ref[i];
        acc += d * d;
      }
    }
    return acc / static_cast<double>(total);
  };

  Rng rng = Rng::stream(cfg.seed, 1);
  TuneResult best{0.0, 1.0, std::numeric_limits<double>::infinity()};
  auto consider = [&](double p1, double p2) {
    const double v = objective(p1, p2);
    if (v < best.val_mse) best = {p1, p2, v};
  };

  for (int d = 0; d < cfg.draws; ++d)
    consider(rng.uniform(cfg.p1_lo, cfg.p1_hi), rng.uniform(cfg.p2_lo, cfg.p2_hi));

  double hw1 = 0.125 * (cfg.p1_hi - cfg.p1_lo);
  double hw2 = 0.125 * (cfg.p2_hi - cfg.p2_lo);
  for (int r = 0; r < cfg.refine_rounds; ++r) {
    const double c1 = best.p1, c2 = best.p2;
    for (int d = 0; d < cfg.refine_draws; ++d) {
      const double p1 = std::clamp(rng.uniform(c1 - hw1, c1 + hw1), cfg.p1_lo, cfg.p1_hi);
      const double p2 = std::clamp(rng.uniform(c2 - hw2, c2 + hw2), cfg.p2_lo, cfg.p2_hi);
      consider(p1, p2);
    }
    hw1 /= 3.0;
    hw2 /= 3.0;
  }
  return best;
}

}  // namespace sideslip
