#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "sideslip/math/rng.hpp"

namespace sideslip {

// Concrete, fully-determined manoeuvre: kind selects the profile shape, the
// numeric fields parameterise it, and seed fixes any randomised details
// (random-steer phases, lap layout).
struct ManoeuvreSpec {
  std::string name;
  std::string kind;
  double duration = 20.0;   // s
  double amplitude = 0.05;  // peak road-wheel angle, rad
  double frequency = 0.5;   // Hz, where the profile is periodic
  double speed = 20.0;      // target speed, m/s
  double speed_end = 20.0;  // terminal target for decelerating profiles
  bool esc_on = false;
  std::uint64_t seed = 0;
};

inline constexpr std::array<const char*, 8> kManoeuvreKinds = {
    "slalom",          "j-turn",       "spiral",    "skidpad",
    "lane-change",     "braking-in-turn", "random-steer", "track-lap"};

namespace detail {

inline double smoothstep(double u) {
  u = u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
  return u * u * (3.0 - 2.0 * u);
}

// Six-component band-limited steering signal; peak magnitude is on the
// order of the spec amplitude.
inline double random_steer(const ManoeuvreSpec& s, double t) {
  Rng rng(s.seed);
  double v = 0.0;
  for (int k = 0; k < 6; ++k) {
    const double f = rng.log_uniform(0.15, 1.2);
    const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    v += std::sin(2.0 * std::numbers::pi * f * t + ph) / (1.0 + f);
  }
  return s.amplitude * 0.45 * v;
}

// Slow wandering corner sequence standing in for a circuit lap, saturated
// at the spec amplitude so corners hold full lock without exceeding it.
inline double lap_steer(const ManoeuvreSpec& s, double t) {
  Rng rng(s.seed ^ 0x1ab);
  double v = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double f = rng.log_uniform(0.03, 0.18);
    const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    v += std::sin(2.0 * std::numbers::pi * f * t + ph);
  }
  const double raw = 0.7 * v;
  return s.amplitude * std::clamp(raw, -1.0, 1.0);
}

}  // namespace detail

// Road-wheel steering angle at time t. All profiles ramp in smoothly so the
// simulator never sees a steering step.
inline double steering_at(const ManoeuvreSpec& s, double t) {
  using detail::smoothstep;
  const double pi2 = 2.0 * std::numbers::pi;
  if (s.kind == "slalom")
    return s.amplitude * smoothstep(t / 2.0) * std::sin(pi2 * s.frequency * t);
  if (s.kind == "j-turn") return s.amplitude * smoothstep((t - 1.0) / 1.5);
  if (s.kind == "spiral") return s.amplitude * smoothstep((t - 1.0) / (0.7 * s.duration));
  if (s.kind == "skidpad") return s.amplitude * smoothstep((t - 0.5) / 2.0);
  if (s.kind == "lane-change") {
    const double u = t - 1.0;
    if (u < 0.0 || u > 1.0 / s.frequency) return 0.0;
    return s.amplitude * std::sin(pi2 * s.frequency * u);
  }
  if (s.kind == "braking-in-turn") return s.amplitude * smoothstep((t - 0.5) / 2.0);
  if (s.kind == "random-steer") return smoothstep(t / 2.0) * detail::random_steer(s, t);
  if (s.kind == "track-lap") return smoothstep(t / 3.0) * detail::lap_steer(s, t);
  return 0.0;
}

// Speed-controller target at time t. Laps slow down in corners;
// braking-in-turn drops from speed to speed_end over a window short
// enough that large drops demand more than the brakes can deliver.
inline double speed_target_at(const ManoeuvreSpec& s, double t) {
  if (s.kind == "braking-in-turn") {
    const double t0 = 0.45 * s.duration, t1 = 0.60 * s.duration;
    if (t <= t0) return s.speed;
    if (t >= t1) return s.speed_end;
    return s.speed + (s.speed_end - s.speed) * (t - t0) / (t1 - t0);
  }
  if (s.kind == "track-lap") {
    // Brake for corners before they arrive and stay slow briefly after
    // them: the target follows the largest steering demand from three
    // seconds back to two seconds ahead, so exits are never full-throttle
    // while the car still carries corner yaw.
    double q = 0.0;
    for (int j = -6; j <= 4; ++j)
      q = std::max(q, std::fabs(steering_at(s, t + 0.5 * j)));
    q /= s.amplitude > 0.0 ? s.amplitude : 1.0;
    return s.speed * (1.0 - 0.5 * (q < 1.0 ? q : 1.0));
  }
  return s.speed;
}

// Randomised catalogue with family proportions mirroring the reference test
// composition (J-turns largest), kind-major order, two stability-control
// settings interleaved.
inline std::vector<ManoeuvreSpec> default_catalogue(std::size_t n, std::uint64_t seed) {
  struct Family {
    const char* kind;
    int weight;
    double dur, dur_jit;
  };
  static constexpr Family kFamilies[] = {
      {"j-turn", 5, 18.0, 4.0},   {"slalom", 4, 25.0, 5.0},
      {"lane-change", 4, 15.0, 3.0}, {"spiral", 3, 30.0, 5.0},
      {"skidpad", 2, 40.0, 8.0},  {"braking-in-turn", 2, 24.0, 4.0},
      {"random-steer", 2, 40.0, 8.0}, {"track-lap", 1, 110.0, 20.0}};
  constexpr int kWeightSum = 23;

  // Largest-remainder apportionment of n across the families.
  std::array<std::size_t, 8> quota{};
  std::array<double, 8> frac{};
  std::size_t assigned = 0;
  for (int g = 0; g < 8; ++g) {
    const double exact = static_cast<double>(n) * kFamilies[g].weight / kWeightSum;
    quota[g] = static_cast<std::size_t>(exact);
    frac[g] = exact - static_cast<double>(quota[g]);
    assigned += quota[g];
  }
  while (assigned < n) {
    int best = 0;
    for (int g = 1; g < 8; ++g)
      if (frac[g] > frac[best]) best = g;
    ++quota[best];
    frac[best] = -1.0;
    ++assigned;
  }

  Rng rng(seed);
  std::vector<ManoeuvreSpec> out;
  out.reserve(n);
  std::size_t idx = 0;
  for (int g = 0; g < 8; ++g) {
    for (std::size_t k = 0; k < quota[g]; ++k, ++idx) {
      const Family& fam = kFamilies[g];
      ManoeuvreSpec s;
      s.kind = fam.kind;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s-%03zu", fam.kind, idx);
      s.name = buf;
      s.duration = fam.dur + rng.uniform(-fam.dur_jit, fam.dur_jit);
      s.esc_on = rng.below(2) == 1;
      s.seed = rng.next();
      if (s.kind == std::string("slalom")) {
        s.amplitude = rng.uniform(0.04, 0.12);
        s.frequency = rng.uniform(0.4, 0.65);
        s.speed = rng.uniform(17.0, 25.0);
      } else if (s.kind == std::string("j-turn")) {
        s.amplitude = rng.uniform(0.02, 0.10);
        s.speed = rng.uniform(15.0, 25.0);
      } else if (s.kind == std::string("spiral")) {
        s.amplitude = rng.uniform(0.08, 0.16);
        s.speed = rng.uniform(14.0, 20.0);
      } else if (s.kind == std::string("skidpad")) {
        s.amplitude = rng.uniform(0.01, 0.07);
        s.speed = rng.uniform(12.0, 18.0);
      } else if (s.kind == std::string("lane-change")) {
        s.amplitude = rng.uniform(0.05, 0.12);
        s.frequency = rng.uniform(0.45, 0.7);
        s.speed = rng.uniform(18.0, 26.0);
      } else if (s.kind == std::string("braking-in-turn")) {
        s.amplitude = rng.uniform(0.03, 0.07);
        s.speed = rng.uniform(17.0, 23.0);
        s.speed_end = rng.uniform(13.0, 16.0);
      } else if (s.kind == std::string("random-steer")) {
        s.amplitude = rng.uniform(0.03, 0.08);
        s.speed = rng.uniform(13.0, 22.0);
      } else {  // track-lap
        s.amplitude = rng.uniform(0.09, 0.13);
        s.speed = rng.uniform(19.0, 24.0);
      }
      if (s.kind != std::string("braking-in-turn")) s.speed_end = s.speed;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace sideslip
