#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sideslip/errors.hpp"

namespace sideslip {

// Blackman-windowed sinc, sum-normalised so the DC gain is exactly 1.
inline std::vector<double> lowpass_taps(double cutoff, double fs, int n_taps) {
  const int m = n_taps - 1;
  const double fc = cutoff / fs;
  std::vector<double> h(static_cast<std::size_t>(n_taps));
  double sum = 0.0;
  for (int k = 0; k < n_taps; ++k) {
    const double t = k - 0.5 * m;
    const double s = t == 0.0 ? 2.0 * fc
                              : std::sin(2.0 * std::numbers::pi * fc * t) / (std::numbers::pi * t);
    const double w = 0.42 - 0.5 * std::cos(2.0 * std::numbers::pi * k / m) +
                     0.08 * std::cos(4.0 * std::numbers::pi * k / m);
    h[static_cast<std::size_t>(k)] = s * w;
    sum += h[static_cast<std::size_t>(k)];
  }
  for (auto& v : h) v /= sum;
  return h;
}

namespace detail {

inline double tap_amplitude(const std::vector<double>& taps, double f, double fs) {
  const double w = 2.0 * std::numbers::pi * f / fs;
  double re = 0.0, im = 0.0;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    re += taps[k] * std::cos(w * static_cast<double>(k));
    im -= taps[k] * std::sin(w * static_cast<double>(k));
  }
  return std::hypot(re, im);
}

// Forward-backward application squares the magnitude response, which would
// put the cascade -3 dB point well below the requested cutoff. The design
// frequency is raised until a single pass sits at -1.5 dB there.
inline double compensated_cutoff(double cutoff, double fs, int n_taps) {
  const double target = std::pow(10.0, -3.0 / 40.0);
  double lo = cutoff, hi = 0.45 * fs;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double g = tap_amplitude(lowpass_taps(mid, fs, n_taps), cutoff, fs);
    (g < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Centered convolution with odd reflection about the endpoints, so constant
// and slowly varying signals pass without edge transients.
inline std::vector<double> conv_reflect(std::span<const double> x,
                                        const std::vector<double>& taps) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto c = static_cast<std::ptrdiff_t>(taps.size() - 1) / 2;
  const auto sample = [&](std::ptrdiff_t j) {
    if (j < 0) return 2.0 * x[0] - x[static_cast<std::size_t>(-j)];
    if (j >= n) return 2.0 * x[static_cast<std::size_t>(n - 1)] - x[static_cast<std::size_t>(2 * n - 2 - j)];
    return x[static_cast<std::size_t>(j)];
  };
  std::vector<double> y(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < taps.size(); ++k)
      s += taps[k] * sample(i + static_cast<std::ptrdiff_t>(k) - c);
    y[static_cast<std::size_t>(i)] = s;
  }
  return y;
}

}  // namespace detail

// Zero-phase FIR low-pass: symmetric windowed-sinc kernel applied forward
// and backward. Pure arithmetic on fixed-order loops, so repeated runs are
// byte-identical.
inline std::vector<double> zero_phase_lowpass(std::span<const double> x, double fs = 100.0,
                                              double cutoff = 5.0, int n_taps = 101) {
  if (x.size() <= static_cast<std::size_t>(n_taps))
    throw TooShort("zero_phase_lowpass: need more samples than filter taps");
  const auto taps = lowpass_taps(detail::compensated_cutoff(cutoff, fs, n_taps), fs, n_taps);
  std::vector<double> y = detail::conv_reflect(x, taps);
  std::vector<double> rev(y.rbegin(), y.rend());
  std::vector<double> z = detail::conv_reflect(rev, taps);
  return {z.rbegin(), z.rend()};
}

}  // namespace sideslip
