#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "sideslip/data/trajectory.hpp"
#include "sideslip/math/rng.hpp"

namespace sideslip {

// Gaussian measurement noise, per channel. Tyre-force noise is specified at
// axle level; each wheel carries an equal independent share.
struct SensorNoise {
  double ay = 0.033;            // m/s^2
  double yaw_rate = 0.001;      // rad/s
  double fy_front_axle = 26.0;  // N
  double fy_rear_axle = 56.0;   // N
  double beta_me_deg = 0.2;     // deg
};

// Corrupt the measured channels with independent per-channel noise streams.
// Inputs the estimator treats as exact (vx, delta, ax, fx, fz) stay clean.
inline Trajectory add_sensor_noise(const Trajectory& tr, std::uint64_t seed,
                                   const SensorNoise& sn = {}) {
  Trajectory out = tr;
  const std::size_t n = tr.size();
  const auto corrupt = [&](std::vector<double>& x, std::uint64_t channel, double std_dev) {
    Rng rng = Rng::stream(seed, channel);
    for (std::size_t i = 0; i < n; ++i) x[i] += rng.gauss(0.0, std_dev);
  };
  corrupt(out.ay, 0, sn.ay);
  corrupt(out.yaw_rate, 1, sn.yaw_rate);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  corrupt(out.fy[kFL], 2, sn.fy_front_axle * inv_sqrt2);
  corrupt(out.fy[kFR], 3, sn.fy_front_axle * inv_sqrt2);
  corrupt(out.fy[kRL], 4, sn.fy_rear_axle * inv_sqrt2);
  corrupt(out.fy[kRR], 5, sn.fy_rear_axle * inv_sqrt2);
  corrupt(out.beta_me, 6, sn.beta_me_deg * std::numbers::pi / 180.0);
  return out;
}

namespace detail {

// Rolling median and median absolute deviation over a centred window,
// clamped at the ends. Robust local statistics track manoeuvre transients
// that a global median would misread as outliers.
inline void rolling_median_mad(const std::vector<double>& x, int half, std::vector<double>& med,
                               std::vector<double>& mad) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  med.resize(x.size());
  mad.resize(x.size());
  std::vector<double> buf;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, i - half);
    const std::ptrdiff_t b = std::min(n, i + half + 1);
    buf.assign(x.begin() + a, x.begin() + b);
    const auto mid = buf.begin() + (buf.size() / 2);
    std::nth_element(buf.begin(), mid, buf.end());
    const double m = *mid;
    for (auto& v : buf) v = std::fabs(v - m);
    std::nth_element(buf.begin(), mid, buf.end());
    med[static_cast<std::size_t>(i)] = m;
    mad[static_cast<std::size_t>(i)] = *mid;
  }
}

// Replace flagged runs by linear interpolation between the nearest clean
// neighbours; runs touching an end copy the one available neighbour.
inline void interpolate_flagged(std::vector<double>& x, const std::vector<char>& flag) {
  const std::size_t n = x.size();
  std::size_t i = 0;
  while (i < n) {
    if (!flag[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && flag[j]) ++j;  // flagged run [i, j)
    const bool has_left = i > 0, has_right = j < n;
    for (std::size_t k = i; k < j; ++k) {
      if (has_left && has_right) {
        const double w = static_cast<double>(k - (i - 1)) / static_cast<double>(j - (i - 1));
        x[k] = x[i - 1] + w * (x[j] - x[i - 1]);
      } else if (has_left) {
        x[k] = x[i - 1];
      } else if (has_right) {
        x[k] = x[j];
      }
    }
    i = j;
  }
}

}  // namespace detail

// Interpolate across samples that sit more than six local MADs from the
// rolling median. Samples recorded above 6 m/s^2 of lateral acceleration are
// never touched: at the handling limit, extreme values are the signal.
inline Trajectory remove_outliers(const Trajectory& tr) {
  constexpr int kHalfWindow = 25;
  constexpr double kMads = 6.0;
  constexpr double kProtectAy = 6.0;

  Trajectory out = tr;
  const std::size_t n = tr.size();
  std::vector<char> shielded(n);
  for (std::size_t i = 0; i < n; ++i) shielded[i] = std::fabs(tr.ay[i]) > kProtectAy ? 1 : 0;

  std::vector<double> med, mad;
  std::vector<char> flag(n);
  const auto scrub = [&](std::vector<double>& x) {
    detail::rolling_median_mad(x, kHalfWindow, med, mad);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      flag[i] = !shielded[i] && mad[i] > 0.0 && std::fabs(x[i] - med[i]) > kMads * mad[i];
      any = any || flag[i];
    }
    if (any) detail::interpolate_flagged(x, flag);
  };

  scrub(out.ax);
  scrub(out.ay);
  scrub(out.vx);
  scrub(out.delta);
  scrub(out.yaw_rate);
  for (int w = 0; w < 4; ++w) {
    scrub(out.fx[w]);
    scrub(out.fy[w]);
    scrub(out.fz[w]);
  }
  scrub(out.beta_me);
  return out;
}

// Keep only maximal runs faster than min_speed and at least min_samples
// long. Timestamps stay absolute, so gaps remain visible downstream.
inline std::vector<Trajectory> gate_speed(const Trajectory& tr, double min_speed = 5.0,
                                          std::size_t min_samples = 100) {
  std::vector<Trajectory> out;
  const std::size_t n = tr.size();
  std::size_t i = 0;
  while (i < n) {
    if (!(tr.vx[i] > min_speed)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && tr.vx[j] > min_speed) ++j;
    if (j - i >= min_samples) out.push_back(slice(tr, i, j));
    i = j;
  }
  return out;
}

}  // namespace sideslip
