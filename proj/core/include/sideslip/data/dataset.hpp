#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "sideslip/data/conditioning.hpp"
#include "sideslip/data/filtering.hpp"
#include "sideslip/data/io.hpp"
#include "sideslip/data/manoeuvres.hpp"
#include "sideslip/data/simulator.hpp"
#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/math/rng.hpp"

namespace sideslip {

// Split fractions apply at manoeuvre level, never at sample level, so no
// manoeuvre contributes to more than one split. Limited mode additionally
// restricts train and val to calm driving; the test split is untouched so
// full and limited evaluations share an identical benchmark.
struct SplitSpec {
  double train = 0.75;
  double val = 0.15;
  double test = 0.10;
  bool limited = false;
};

struct Dataset {
  std::vector<Trajectory> train, val, test;
};

namespace detail {

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

// Stratified manoeuvre-level assignment: within each kind, shuffle and hand
// out test then val quotas, apportioned by largest remainder so every kind
// is represented proportionally.
inline std::vector<Split> assign_splits(std::span<const ManoeuvreSpec> specs,
                                        const SplitSpec& sp, std::uint64_t seed) {
  const std::size_t n = specs.size();

  // Group indices by kind, known kinds first in canonical order.
  std::vector<std::string> kind_order;
  for (const char* k : kManoeuvreKinds) kind_order.emplace_back(k);
  for (const auto& s : specs)
    if (std::find(kind_order.begin(), kind_order.end(), s.kind) == kind_order.end())
      kind_order.push_back(s.kind);
  std::vector<std::vector<std::size_t>> groups;
  for (const auto& kind : kind_order) {
    std::vector<std::size_t> g;
    for (std::size_t i = 0; i < n; ++i)
      if (specs[i].kind == kind) g.push_back(i);
    if (!g.empty()) groups.push_back(std::move(g));
  }

  for (std::size_t g = 0; g < groups.size(); ++g) {
    Rng rng = Rng::stream(seed, 1000 + g);
    auto& idx = groups[g];
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.below(i)]);
  }

  // Largest-remainder apportionment of `want` slots over the group sizes,
  // capped by what each group still has available.
  const auto apportion = [&](std::size_t want, const std::vector<std::size_t>& avail) {
    std::vector<std::size_t> quota(groups.size(), 0);
    std::vector<double> frac(groups.size(), 0.0);
    std::size_t given = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double exact =
          static_cast<double>(want) * static_cast<double>(groups[g].size()) / static_cast<double>(n);
      quota[g] = std::min(static_cast<std::size_t>(exact), avail[g]);
      frac[g] = exact - std::floor(exact);
      given += quota[g];
    }
    while (given < want) {
      std::size_t best = groups.size();
      for (std::size_t g = 0; g < groups.size(); ++g)
        if (quota[g] < avail[g] && (best == groups.size() || frac[g] > frac[best])) best = g;
      if (best == groups.size()) break;
      ++quota[best];
      frac[best] = -1.0;
      ++given;
    }
    return quota;
  };

  std::vector<std::size_t> avail(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) avail[g] = groups[g].size();
  const auto n_test = static_cast<std::size_t>(std::llround(sp.test * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(sp.val * static_cast<double>(n)));
  const auto test_quota = apportion(n_test, avail);
  for (std::size_t g = 0; g < groups.size(); ++g) avail[g] -= test_quota[g];
  const auto val_quota = apportion(n_val, avail);

  std::vector<Split> out(n, Split::kTrain);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::size_t k = 0;
    for (; k < test_quota[g]; ++k) out[groups[g][k]] = Split::kTest;
    for (; k < test_quota[g] + val_quota[g]; ++k) out[groups[g][k]] = Split::kVal;
  }
  return out;
}

// Maximal runs with |ay| within the cap, used to trim the limited dataset to
// calm driving while keeping every kept run contiguous at 100 Hz.
inline std::vector<Trajectory> cap_lateral(const Trajectory& tr, double ay_cap,
                                           std::size_t min_samples) {
  std::vector<Trajectory> out;
  const std::size_t n = tr.size();
  std::size_t i = 0;
  while (i < n) {
    if (std::fabs(tr.ay[i]) > ay_cap) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && std::fabs(tr.ay[j]) <= ay_cap) ++j;
    if (j - i >= min_samples) out.push_back(slice(tr, i, j));
    i = j;
  }
  return out;
}

}  // namespace detail

// Simulate, corrupt, filter, scrub, gate, split and (optionally) persist a
// manoeuvre catalogue. Fully determined by the catalogue and the seed.
inline Dataset build_dataset(std::span<const ManoeuvreSpec> specs, const SplitSpec& sp,
                             std::uint64_t seed, const std::string& out_dir = "") {
  if (specs.empty()) throw EmptyDataset("build_dataset: no manoeuvres");

  // Pieces shorter than 1.5 s carry too little context for the reference
  // filtering and sequence training downstream.
  constexpr std::size_t kMinPiece = 150;
  constexpr double kLimitedAyCap = 7.0;

  const auto splits = detail::assign_splits(specs, sp, seed);
  Dataset ds;
  std::vector<std::string> manifest;

  for (std::size_t idx = 0; idx < specs.size(); ++idx) {
    const auto& spec = specs[idx];
    const std::uint64_t mseed = Rng::stream(seed, 2000 + idx).next();
    Trajectory tr = truth_simulate(spec, mseed);
    tr = add_sensor_noise(tr, mseed);
    tr.ay = zero_phase_lowpass(tr.ay, 1.0 / tr.dt);
    tr.yaw_rate = zero_phase_lowpass(tr.yaw_rate, 1.0 / tr.dt);
    for (int w = 0; w < 4; ++w) tr.fy[w] = zero_phase_lowpass(tr.fy[w], 1.0 / tr.dt);
    tr.beta_me = zero_phase_lowpass(tr.beta_me, 1.0 / tr.dt);
    tr = remove_outliers(tr);

    std::vector<Trajectory> pieces;
    for (const auto& seg : gate_speed(tr)) {
      if (seg.size() < kMinPiece) continue;
      if (sp.limited && splits[idx] != detail::Split::kTest) {
        for (auto& capped : detail::cap_lateral(seg, kLimitedAyCap, kMinPiece))
          pieces.push_back(std::move(capped));
      } else {
        pieces.push_back(seg);
      }
    }

    auto& bucket = splits[idx] == detail::Split::kTest  ? ds.test
                   : splits[idx] == detail::Split::kVal ? ds.val
                                                        : ds.train;
    const char* split_name = splits[idx] == detail::Split::kTest  ? "test"
                             : splits[idx] == detail::Split::kVal ? "val"
                                                                  : "train";
    for (std::size_t j = 0; j < pieces.size(); ++j) {
      Trajectory& piece = pieces[j];
      piece.name = pieces.size() == 1 ? spec.name : spec.name + "#" + std::to_string(j);
      manifest.push_back(std::string(split_name) + " " + piece.name + ".csv " + piece.kind +
                         " esc=" + (piece.esc_on ? "1" : "0") +
                         " samples=" + std::to_string(piece.size()));
      bucket.push_back(std::move(piece));
    }
  }

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path root(out_dir);
    fs::create_directories(root / "train");
    fs::create_directories(root / "val");
    fs::create_directories(root / "test");
    const auto persist = [&](const std::vector<Trajectory>& split, const char* dir) {
      for (const auto& tr : split)
        save_trajectory_csv((root / dir / (tr.name + ".csv")).string(), tr);
    };
    persist(ds.train, "train");
    persist(ds.val, "val");
    persist(ds.test, "test");
    std::ofstream mf(root / "manifest.txt", std::ios::binary);
    if (!mf) throw IoError("build_dataset: cannot write manifest");
    for (const auto& line : manifest) mf << line << '\n';
  }
  return ds;
}

}  // namespace sideslip
