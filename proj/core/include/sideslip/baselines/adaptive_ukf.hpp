#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/filter/run_filter.hpp"

namespace sideslip {

// Two-threshold switch on |ay|: engages at `engage`, lets go only below
// `release`, so oscillation inside the band never toggles it. The defaults
// bracket the handover to non-linear tyre behaviour around 4 m/s^2.
struct HysteresisGate {
  double engage = 4.0;     // m/s^2
  double release = 3.5;    // m/s^2
  double reduction = 5.0;  // divides the tyre-force observation stds
  bool engaged = false;

  bool update(double ay) {
    if (!(release < engage))
      throw NonPositiveInput("hysteresis gate: band width must be positive");
    const double a = std::fabs(ay);
    engaged = engaged ? (a >= release) : (a >= engage);
    return engaged;
  }
};

struct AdaptiveRun {
  RunResult run;
  std::vector<std::uint8_t> engaged;  // gate state per step
};

// Model-based comparison estimator: the four-channel filter (no
// pseudo-measurement) whose tyre-force observation stds shrink by the
// gate's reduction factor while the recorded |ay| says the tyres have left
// their linear range, raising the Kalman gain exactly where the model's
// force predictions go soft.
inline AdaptiveRun adaptive_ukf_run(const Trajectory& tr, const NoiseParams& base,
                                    HysteresisGate gate, const VehicleParams& vp,
                                    const TyreParams& ty, const UtParams& ut = {}) {
  AdaptiveRun out;
  out.engaged.resize(tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) out.engaged[i] = gate.update(tr.ay[i]) ? 1 : 0;

  const auto noise_at = [&](std::size_t i) {
    NoiseParams np = base;
    if (out.engaged[i]) {
      np.r_fyf /= gate.reduction;
      np.r_fyr /= gate.reduction;
    }
    return np;
  };
  out.run = run_filter(tr, noise_at, {}, four_channel_mask(), vp, ty, ut);
  return out;
}

}  // namespace sideslip
