#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sideslip {

// Wheel index convention used across channels: FL, FR, RL, RR.
enum Wheel { kFL = 0, kFR = 1, kRL = 2, kRR = 3 };

// One manoeuvre at 100 Hz. After conditioning, t may contain gaps (speed
// gating, limited-dataset sample drops); consumers that need contiguity
// split on dt jumps.
struct Trajectory {
  std::string name;
  std::string kind;  // manoeuvre family tag
  bool esc_on = false;
  std::uint64_t seed = 0;
  double dt = 0.01;

  std::vector<double> t;
  std::vector<double> ax, ay, vx, delta, yaw_rate;
  std::array<std::vector<double>, 4> fx, fy, fz;
  std::vector<double> beta_me;  // reference sideslip, rad

  std::size_t size() const { return t.size(); }

  void resize(std::size_t n) {
    t.resize(n);
    ax.resize(n);
    ay.resize(n);
    vx.resize(n);
    delta.resize(n);
    yaw_rate.resize(n);
    for (auto& w : fx) w.resize(n);
    for (auto& w : fy) w.resize(n);
    for (auto& w : fz) w.resize(n);
    beta_me.resize(n);
  }
};

inline constexpr int kNetInputs = 17;

// Fixed network input ordering.
inline void net_input(const Trajectory& tr, std::size_t i, double out[kNetInputs]) {
  out[0] = tr.ax[i];
  out[1] = tr.ay[i];
  out[2] = tr.vx[i];
  out[3] = tr.delta[i];
  out[4] = tr.yaw_rate[i];
  for (int w = 0; w < 4; ++w) {
    out[5 + w] = tr.fx[w][i];
    out[9 + w] = tr.fy[w][i];
    out[13 + w] = tr.fz[w][i];
  }
}

inline double axle_front(const std::array<std::vector<double>, 4>& ch, std::size_t i) {
  return ch[kFL][i] + ch[kFR][i];
}
inline double axle_rear(const std::array<std::vector<double>, 4>& ch, std::size_t i) {
  return ch[kRL][i] + ch[kRR][i];
}

// Copy of samples [a, b); metadata and absolute timestamps are preserved.
inline Trajectory slice(const Trajectory& tr, std::size_t a, std::size_t b) {
  Trajectory out;
  out.name = tr.name;
  out.kind = tr.kind;
  out.esc_on = tr.esc_on;
  out.seed = tr.seed;
  out.dt = tr.dt;
  const auto cut = [a, b](const std::vector<double>& x) {
    return std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(a),
                               x.begin() + static_cast<std::ptrdiff_t>(b));
  };
  out.t = cut(tr.t);
  out.ax = cut(tr.ax);
  out.ay = cut(tr.ay);
  out.vx = cut(tr.vx);
  out.delta = cut(tr.delta);
  out.yaw_rate = cut(tr.yaw_rate);
  for (int w = 0; w < 4; ++w) {
    out.fx[w] = cut(tr.fx[w]);
    out.fy[w] = cut(tr.fy[w]);
    out.fz[w] = cut(tr.fz[w]);
  }
  out.beta_me = cut(tr.beta_me);
  return out;
}

}  // namespace sideslip
