#pragma once

#include <span>
#include <vector>

#include "sideslip/data/trajectory.hpp"
#include "sideslip/filter/run_filter.hpp"
#include "sideslip/net/network.hpp"

namespace sideslip {

// Per-step network outputs over a whole trajectory, eval mode.
struct HybridOutputs {
  std::vector<double> beta_dd;
  std::vector<double> sigma_dd;
  std::vector<double> sigma_vy;
  std::vector<double> sigma_yawrate;
};

inline HybridOutputs network_outputs(const Trajectory& tr, const NetworkParams& p) {
  HybridOutputs o;
  const std::size_t n = tr.size();
  o.beta_dd.resize(n);
  o.sigma_dd.resize(n);
  o.sigma_vy.resize(n);
  o.sigma_yawrate.resize(n);
  double xin[kNetInputs], xn[kNetInputs];
  for (std::size_t i = 0; i < n; ++i) {
    net_input(tr, i, xin);
    normalize(xin, p.scaler, xn);
    const NetOutput r = forward(std::span<const double>(xn, kNetInputs), p);
    o.beta_dd[i] = r.beta_dd;
    o.sigma_dd[i] = r.sigma_dd;
    o.sigma_vy[i] = r.sigma_vy;
    o.sigma_yawrate[i] = r.sigma_yawrate;
  }
  return o;
}

struct HybridRun {
  RunResult run;
  HybridOutputs net;
};

// The hybrid estimator: the 5-channel UKF driven per step by the network's
// adaptive process stds and pseudo-measurement (with its distrust std);
// observation stds come from `base`.
inline HybridRun hybrid_run(const Trajectory& tr, const NetworkParams& p, const NoiseParams& base,
                            const VehicleParams& vp, const TyreParams& ty,
                            const UtParams& ut = {}) {
  HybridRun h;
  h.net = network_outputs(tr, p);
  const auto noise_at = [&](std::size_t i) {
    NoiseParams np = base;
    np.sigma_vy = h.net.sigma_vy[i];
    np.sigma_yawrate = h.net.sigma_yawrate[i];
    np.sigma_dd = h.net.sigma_dd[i];
    return np;
  };
  h.run = run_filter(tr, noise_at, h.net.beta_dd, ObservationMask{}, vp, ty, ut);
  return h;
}

}  // namespace sideslip
