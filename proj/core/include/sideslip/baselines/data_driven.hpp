#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sideslip/data/filtering.hpp"
#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/math/rng.hpp"
#include "sideslip/net/network.hpp"
#include "sideslip/train/training.hpp"

namespace sideslip {

inline constexpr std::size_t kEnsembleMembers = 20;

// Floor added to the softplus-mapped variance channel so the NLL stays
// finite when a member collapses its predicted spread.
inline constexpr double kVarianceFloor = 1e-6;

// Overflow-safe log(1 + e^x).
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Batched forward/backward for the scalar regression head: mean squared
// error of the single raw output against the reference.
inline BatchGrad mse_batch(const NetworkParams& p, std::span<const double> xs,
                           std::span<const double> y, Rng* dropout_rng) {
  const std::size_t bsz = y.size();
  if (xs.size() != bsz * static_cast<std::size_t>(kNetInputs))
    throw LengthMismatch("mse_batch: inputs vs targets");
  if (p.sizes.back() != 1) throw LengthMismatch("mse_batch: scalar head required");
  const detail::DenseBatch tape = detail::dense_forward(p, xs, bsz, dropout_rng);

  const std::vector<double>& zl = tape.zs.back();
  const double inv_b = 1.0 / static_cast<double>(bsz);
  BatchGrad out;
  out.grad.assign(p.n_params(), 0.0);
  std::vector<double> g(bsz, 0.0);
  for (std::size_t b = 0; b < bsz; ++b) {
    const double res = y[b] - zl[b];
    out.loss += inv_b * res * res;
    g[b] = -2.0 * inv_b * res;
  }
  detail::dense_backward(p, tape, std::move(g), out.grad);
  return out;
}

// Batched forward/backward for the mean/spread head: Gaussian NLL with the
// variance channel softplus-mapped and floored. Both outputs receive
// gradient, unlike the pre-training head.
inline BatchGrad nll_batch(const NetworkParams& p, std::span<const double> xs,
                           std::span<const double> y, Rng* dropout_rng) {
  const std::size_t bsz = y.size();
  if (xs.size() != bsz * static_cast<std::size_t>(kNetInputs))
    throw LengthMismatch("nll_batch: inputs vs targets");
  if (p.sizes.back() != 2) throw LengthMismatch("nll_batch: mean/spread head required");
  const detail::DenseBatch tape = detail::dense_forward(p, xs, bsz, dropout_rng);

  const std::vector<double>& zl = tape.zs.back();
  const double inv_b = 1.0 / static_cast<double>(bsz);
  BatchGrad out;
  out.grad.assign(p.n_params(), 0.0);
  std::vector<double> g(bsz * 2, 0.0);
  for (std::size_t b = 0; b < bsz; ++b) {
    const double mu = zl[b * 2 + 0];
    const double sraw = zl[b * 2 + 1];
    const double var = softplus(sraw) + kVarianceFloor;
    const double res = y[b] - mu;
    out.loss += 0.5 * inv_b * (std::log(var) + res * res / var);
    g[b * 2 + 0] = -inv_b * res / var;
    const double dvar = 0.5 * inv_b * (1.0 / var - res * res / (var * var));
    g[b * 2 + 1] = dvar / (1.0 + std::exp(-sraw));
  }
  detail::dense_backward(p, tape, std::move(g), out.grad);
  return out;
}

struct BaselineConfig {
  std::vector<int> sizes = baseline_sizes(1);
  int batch = 1024;
  double lr = 1e-3;
  int max_epochs = 400;
  int patience = 20;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
};

struct BaselineTrainResult {
  NetworkParams params;
  std::vector<EpochRow> history;
};

namespace detail {

inline std::vector<std::vector<double>> filtered_refs(std::span<const Trajectory> set) {
  std::vector<std::vector<double>> refs;
  refs.reserve(set.size());
  for (const Trajectory& tr : set) refs.push_back(zero_phase_lowpass(tr.beta_me));
  return refs;
}

// Pooled MSE of the mean head (raw output 0) in eval mode.
inline double pool_head_mse(const NetworkParams& p, const Pool& pool) {
  const std::size_t n = pool.y.size();
  const auto stride = static_cast<std::size_t>(p.sizes.back());
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t chunk = 4096;
  double acc = 0.0;
  std::vector<double> raw;
  for (std::size_t b0 = 0; b0 < n; b0 += chunk) {
    const std::size_t c = std::min(chunk, n - b0);
    raw.resize(c * stride);
    forward_batch_raw(std::span<const double>(pool.x.data() + b0 * kNetInputs, c * kNetInputs), c,
                      p, raw);
    for (std::size_t b = 0; b < c; ++b) {
      const double d = pool.y[b0 + b] - raw[b * stride];
      acc += inv_n * d * d;
    }
  }
  return acc;
}

}  // namespace detail

// The purely data-driven estimator: a wider two-hidden-layer network
// regressed straight onto the filtered sideslip reference. Mini-batch Adam
// with per-epoch validation, best-validation checkpointing, and early
// stopping once the patience window closes.
inline BaselineTrainResult ffnn_baseline_train(std::span<const Trajectory> train_set,
                                               std::span<const Trajectory> val_set,
                                               const BaselineConfig& cfg = {}) {
  if (train_set.empty() || val_set.empty()) throw EmptySplit("ffnn_baseline_train: empty split");

  BaselineTrainResult out;
  NetworkParams p = xavier_init(cfg.sizes, cfg.seed);
  p.scaler = fit_scaler(train_set);

  const detail::Pool train_pool =
      detail::build_pool(train_set, detail::filtered_refs(train_set), p.scaler);
  const detail::Pool val_pool = detail::build_pool(val_set, detail::filtered_refs(val_set), p.scaler);

  auto theta = flatten(p);
  Rng order_rng = Rng::stream(cfg.seed, 1);
  Rng drop_rng = Rng::stream(cfg.seed, 2);

  AdamState adam;
  const std::size_t n = train_pool.y.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const auto bsz = static_cast<std::size_t>(cfg.batch);
  std::vector<double> xb(bsz * kNetInputs), yb(bsz);

  double best_val = std::numeric_limits<double>::infinity();
  auto best_theta = theta;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[order_rng.below(i)]);
    double tl = 0.0;
    std::size_t nb = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += bsz) {
      const std::size_t c = std::min(bsz, n - b0);
      for (std::size_t b = 0; b < c; ++b) {
        const std::size_t src = perm[b0 + b];
        std::copy_n(train_pool.x.data() + src * kNetInputs, kNetInputs, xb.data() + b * kNetInputs);
        yb[b] = train_pool.y[src];
      }
      assign_flat(p, theta);
      BatchGrad bg = mse_batch(p, std::span<const double>(xb.data(), c * kNetInputs),
                               std::span<const double>(yb.data(), c), &drop_rng);
      clip_gradient(bg.grad, cfg.clip_norm);
      adam_update(theta, bg.grad, adam, cfg.lr);
      tl += bg.loss;
      ++nb;
    }
    assign_flat(p, theta);
    const double vl = detail::pool_head_mse(p, val_pool);
    out.history.push_back({epoch, "ffnn", tl / static_cast<double>(nb), vl, vl});
    if (vl < best_val) {
      best_val = vl;
      best_theta = theta;
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  theta = best_theta;
  assign_flat(p, theta);
  out.params = p;
  return out;
}

// Pooled mean-head MSE of a trained network against the filtered reference.
inline double baseline_mse(const NetworkParams& p, std::span<const Trajectory> set) {
  if (set.empty()) throw EmptySplit("baseline_mse: empty split");
  const detail::Pool pool = detail::build_pool(set, detail::filtered_refs(set), p.scaler);
  return detail::pool_head_mse(p, pool);
}

// Fixed-size collection of independently trained mean/spread networks plus
// the distrust-scaling pair applied when the spread feeds the filter.
struct EnsembleParams {
  std::vector<NetworkParams> members;  // exactly kEnsembleMembers
  double p1 = 0.0;                     // identity scaling until tuned
  double p2 = 1.0;
};

struct EnsembleConfig {
  std::vector<int> sizes = baseline_sizes(2);
  int batch = 1024;
  double lr = 8e-4;
  int epochs = 30;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void require_full(const EnsembleParams& e, const char* who) {
  if (e.members.size() != kEnsembleMembers)
    throw LengthMismatch(std::string(who) + ": expected " + std::to_string(kEnsembleMembers) +
                         " members, got " + std::to_string(e.members.size()));
}

}  // namespace detail

// Twenty networks on identical data with per-member seeds driving the
// initialisation, the shuffles, and the dropout streams. Each fits a mean
// and a spread channel by Gaussian NLL for a fixed epoch count.
inline EnsembleParams de_train(std::span<const Trajectory> train_set,
                               const EnsembleConfig& cfg = {}) {
  if (train_set.empty()) throw EmptySplit("de_train: empty split");

  const Scaler sc = fit_scaler(train_set);
  const detail::Pool pool = detail::build_pool(train_set, detail::filtered_refs(train_set), sc);
  const std::size_t n = pool.y.size();
  const auto bsz = static_cast<std::size_t>(cfg.batch);

  EnsembleParams e;
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    const std::uint64_t mseed = Rng::stream(cfg.seed, k + 1).next();
    NetworkParams p = xavier_init(cfg.sizes, mseed);
    p.scaler = sc;
    auto theta = flatten(p);
    Rng order_rng = Rng::stream(mseed, 1);
    Rng drop_rng = Rng::stream(mseed, 2);
    AdamState adam;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<double> xb(bsz * kNetInputs), yb(bsz);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[order_rng.below(i)]);
      for (std::size_t b0 = 0; b0 < n; b0 += bsz) {
        const std::size_t c = std::min(bsz, n - b0);
        for (std::size_t b = 0; b < c; ++b) {
          const std::size_t src = perm[b0 + b];
          std::copy_n(pool.x.data() + src * kNetInputs, kNetInputs, xb.data() + b * kNetInputs);
          yb[b] = pool.y[src];
        }
        assign_flat(p, theta);
        BatchGrad bg = nll_batch(p, std::span<const double>(xb.data(), c * kNetInputs),
                                 std::span<const double>(yb.data(), c), &drop_rng);
        clip_gradient(bg.grad, cfg.clip_norm);
        adam_update(theta, bg.grad, adam, cfg.lr);
      }
    }
    assign_flat(p, theta);
    e.members.push_back(std::move(p));
  }
  return e;
}

struct DePrediction {
  double beta_dd;   // mean of the member means
  double sigma_dd;  // population variance of the member means
};

// Ensemble estimate at one raw input row. Only the mean channel of each
// member enters the aggregate; the spread is the disagreement between
// members, not the members' own predicted variances.
inline DePrediction de_predict(std::span<const double> x, const EnsembleParams& e) {
  detail::require_full(e, "de_predict");
  if (x.size() != static_cast<std::size_t>(kNetInputs))
    throw LengthMismatch("de_predict: input width");

  double mu[kEnsembleMembers];
  double xn[kNetInputs];
  std::vector<double> raw;
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    const NetworkParams& m = e.members[k];
    normalize(x.data(), m.scaler, xn);
    raw.resize(static_cast<std::size_t>(m.sizes.back()));
    forward_raw(std::span<const double>(xn, kNetInputs), m, false, nullptr, raw);
    mu[k] = raw[0];
  }
  double s = 0.0;
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) s += mu[k];
  const double mean = s / static_cast<double>(kEnsembleMembers);
  double q = 0.0;
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    const double d = mu[k] - mean;
    q += d * d;
  }
  return {mean, q / static_cast<double>(kEnsembleMembers)};
}

struct EnsembleOutputs {
  std::vector<double> beta_dd;
  std::vector<double> sigma_dd;
};

// Whole-trajectory aggregation; per step this is exactly de_predict, with
// the member forwards batched over samples.
inline EnsembleOutputs ensemble_outputs(const Trajectory& tr, const EnsembleParams& e) {
  detail::require_full(e, "ensemble_outputs");
  const std::size_t n = tr.size();
  EnsembleOutputs out;
  out.beta_dd.resize(n);
  out.sigma_dd.resize(n);
  if (n == 0) return out;

  std::vector<double> mus(kEnsembleMembers * n);
  std::vector<double> xs(n * kNetInputs);
  std::vector<double> raw;
  double xin[kNetInputs];
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    const NetworkParams& m = e.members[k];
    for (std::size_t i = 0; i < n; ++i) {
      net_input(tr, i, xin);
      normalize(xin, m.scaler, xs.data() + i * kNetInputs);
    }
    const auto stride = static_cast<std::size_t>(m.sizes.back());
    raw.resize(n * stride);
    forward_batch_raw(xs, n, m, raw);
    for (std::size_t i = 0; i < n; ++i) mus[k * n + i] = raw[i * stride];
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < kEnsembleMembers; ++k) s += mus[k * n + i];
    const double mean = s / static_cast<double>(kEnsembleMembers);
    double q = 0.0;
    for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
      const double d = mus[k * n + i] - mean;
      q += d * d;
    }
    out.beta_dd[i] = mean;
    out.sigma_dd[i] = q / static_cast<double>(kEnsembleMembers);
  }
  return out;
}

// On-disk layout: one weight file per member plus a JSON meta file carrying
// the scaling pair.
inline void save_ensemble(const EnsembleParams& e, const std::string& dir) {
  detail::require_full(e, "save_ensemble");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("save_ensemble: cannot create " + dir);

  nlohmann::json j;
  j["members"] = kEnsembleMembers;
  j["p1"] = e.p1;
  j["p2"] = e.p2;
  {
    std::ofstream f(dir + "/ensemble.json", std::ios::trunc);
    if (!f) throw IoError("save_ensemble: cannot open " + dir + "/ensemble.json");
    f << j.dump(2) << "\n";
    if (!f) throw IoError("save_ensemble: short write to " + dir + "/ensemble.json");
  }
  char name[24];
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    std::snprintf(name, sizeof(name), "/member_%02zu.bin", k);
    save_network(e.members[k], dir + name);
  }
}

inline EnsembleParams load_ensemble(const std::string& dir) {
  std::ifstream f(dir + "/ensemble.json");
  if (!f) throw IoError("load_ensemble: cannot open " + dir + "/ensemble.json");
  EnsembleParams e;
  try {
    nlohmann::json j;
    f >> j;
    if (j.at("members").get<std::size_t>() != kEnsembleMembers)
      throw ParseError("load_ensemble: wrong member count");
    e.p1 = j.at("p1").get<double>();
    e.p2 = j.at("p2").get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("load_ensemble: ") + ex.what());
  }
  if (!std::isfinite(e.p1) || !std::isfinite(e.p2))
    throw ParseError("load_ensemble: non-finite scaling pair");
  char name[24];
  for (std::size_t k = 0; k < kEnsembleMembers; ++k) {
    std::snprintf(name, sizeof(name), "/member_%02zu.bin", k);
    e.members.push_back(load_network(dir + name));
  }
  return e;
}

}  // namespace sideslip
