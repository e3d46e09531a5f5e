#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"

namespace sideslip {

namespace detail {

inline constexpr const char* kTrajectoryMagic = "# sideslip-trajectory v1";
inline constexpr const char* kTrajectoryColumns =
    "# t,ax,ay,vx,delta,yaw_rate,fx_fl,fx_fr,fx_rl,fx_rr,"
    "fy_fl,fy_fr,fy_rl,fy_rr,fz_fl,fz_fr,fz_rl,fz_rr,beta_me";

// %.17g prints enough digits that the exact double is recovered on parse,
// and re-printing the parsed value reproduces the text byte for byte.
inline void print_field(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  line += buf;
}

inline double parse_double(const std::string& s, std::size_t& pos, const std::string& path) {
  const char* begin = s.data() + pos;
  const char* end = s.data() + s.size();
  double v = 0.0;
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc())
    throw ParseError("load_trajectory_csv: bad number in " + path);
  pos = static_cast<std::size_t>(res.ptr - s.data());
  return v;
}

}  // namespace detail

inline void save_trajectory_csv(const std::string& path, const Trajectory& tr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_trajectory_csv: cannot open " + path);
  std::string line;
  f << detail::kTrajectoryMagic << '\n';
  f << "# name: " << tr.name << '\n';
  f << "# kind: " << tr.kind << '\n';
  f << "# esc: " << (tr.esc_on ? 1 : 0) << '\n';
  f << "# seed: " << tr.seed << '\n';
  line = "# dt: ";
  detail::print_field(line, tr.dt);
  f << line << '\n';
  f << "# n: " << tr.size() << '\n';
  f << detail::kTrajectoryColumns << '\n';
  for (std::size_t i = 0; i < tr.size(); ++i) {
    line.clear();
    const double row[19] = {tr.t[i],        tr.ax[i],       tr.ay[i],       tr.vx[i],
                            tr.delta[i],    tr.yaw_rate[i], tr.fx[0][i],    tr.fx[1][i],
                            tr.fx[2][i],    tr.fx[3][i],    tr.fy[0][i],    tr.fy[1][i],
                            tr.fy[2][i],    tr.fy[3][i],    tr.fz[0][i],    tr.fz[1][i],
                            tr.fz[2][i],    tr.fz[3][i],    tr.beta_me[i]};
    for (int c = 0; c < 19; ++c) {
      if (c) line += ',';
      detail::print_field(line, row[c]);
    }
    f << line << '\n';
  }
  if (!f) throw IoError("save_trajectory_csv: write failed for " + path);
}

inline Trajectory load_trajectory_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_trajectory_csv: cannot open " + path);

  Trajectory tr;
  std::string ln;
  if (!std::getline(f, ln) || ln != detail::kTrajectoryMagic)
    throw ParseError("load_trajectory_csv: bad header in " + path);

  const auto header_value = [&](const char* key) {
    if (!std::getline(f, ln))
      throw ParseError("load_trajectory_csv: truncated header in " + path);
    const std::string prefix = std::string("# ") + key + ": ";
    if (ln.rfind(prefix, 0) != 0)
      throw ParseError("load_trajectory_csv: expected " + std::string(key) + " in " + path);
    return ln.substr(prefix.size());
  };
  tr.name = header_value("name");
  tr.kind = header_value("kind");
  tr.esc_on = header_value("esc") == "1";
  {
    const std::string s = header_value("seed");
    const auto res = std::from_chars(s.data(), s.data() + s.size(), tr.seed);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ParseError("load_trajectory_csv: bad seed in " + path);
  }
  {
    const std::string s = header_value("dt");
    std::size_t pos = 0;
    tr.dt = detail::parse_double(s, pos, path);
    if (pos != s.size()) throw ParseError("load_trajectory_csv: bad dt in " + path);
  }
  std::size_t n = 0;
  {
    const std::string s = header_value("n");
    const auto res = std::from_chars(s.data(), s.data() + s.size(), n);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ParseError("load_trajectory_csv: bad sample count in " + path);
  }
  if (!std::getline(f, ln) || ln != detail::kTrajectoryColumns)
    throw ParseError("load_trajectory_csv: bad column header in " + path);

  tr.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(f, ln))
      throw ParseError("load_trajectory_csv: expected " + std::to_string(n) + " rows in " + path);
    std::size_t pos = 0;
    double row[19];
    for (int c = 0; c < 19; ++c) {
      if (c) {
        if (pos >= ln.size() || ln[pos] != ',')
          throw ParseError("load_trajectory_csv: short row in " + path);
        ++pos;
      }
      row[c] = detail::parse_double(ln, pos, path);
    }
    if (pos != ln.size()) throw ParseError("load_trajectory_csv: trailing data in " + path);
    tr.t[i] = row[0];
    tr.ax[i] = row[1];
    tr.ay[i] = row[2];
    tr.vx[i] = row[3];
    tr.delta[i] = row[4];
    tr.yaw_rate[i] = row[5];
    for (int w = 0; w < 4; ++w) {
      tr.fx[w][i] = row[6 + w];
      tr.fy[w][i] = row[10 + w];
      tr.fz[w][i] = row[14 + w];
    }
    tr.beta_me[i] = row[18];
  }
  if (std::getline(f, ln) && !ln.empty())
    throw ParseError("load_trajectory_csv: trailing rows in " + path);
  return tr;
}

}  // namespace sideslip
