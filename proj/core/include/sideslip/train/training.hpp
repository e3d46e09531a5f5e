#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sideslip/data/filtering.hpp"
#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/filter/run_filter.hpp"
#include "sideslip/math/rng.hpp"
#include "sideslip/math/tape.hpp"
#include "sideslip/net/network.hpp"
#include "sideslip/vehicle/model.hpp"

namespace sideslip {

struct PretrainTargets {
  double sigma_vy_hat = 0.0007;
  double sigma_yawrate_hat = 0.002;
  double eps = 1e-6;
};

// Pre-training loss: mean-squared pull of the two process-noise heads
// toward their fixed targets, plus a per-sample Gaussian NLL of the
// pseudo-measurement. The MSE terms are batch means, the NLL is a batch sum.
inline double pretrain_loss(std::span<const NetOutput> outs, std::span<const double> beta_me,
                            const PretrainTargets& t) {
  if (outs.size() != beta_me.size())
    throw LengthMismatch("pretrain_loss: outputs vs references");
  const double inv_n = 1.0 / static_cast<double>(outs.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const double dvy = outs[i].sigma_vy - t.sigma_vy_hat;
    const double dyr = outs[i].sigma_yawrate - t.sigma_yawrate_hat;
    const double sdd = std::max(outs[i].sigma_dd, t.eps);
    const double res = beta_me[i] - outs[i].beta_dd;
    loss += inv_n * (dvy * dvy + dyr * dyr) + 0.5 * (std::log(sdd) + res * res / sdd);
  }
  return loss;
}

struct BatchGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

namespace detail {

// Forward record of one dense batch: pre-activations, activations (the
// input block at index 0), and the dropout mask applied to each hidden
// layer. Masks are drawn layer-major, one decision per (sample, neuron).
struct DenseBatch {
  std::vector<std::vector<double>> zs, acts, masks;
};

inline DenseBatch dense_forward(const NetworkParams& p, std::span<const double> xs,
                                std::size_t bsz, Rng* dropout_rng) {
  const std::size_t nl = p.w.size();
  DenseBatch t;
  t.zs.resize(nl);
  t.acts.resize(nl + 1);
  t.masks.resize(nl);
  t.acts[0].assign(xs.begin(), xs.end());
  for (std::size_t l = 0; l < nl; ++l) {
    const auto n_in = static_cast<std::size_t>(p.sizes[l]);
    const auto n_out = static_cast<std::size_t>(p.sizes[l + 1]);
    t.zs[l].assign(bsz * n_out, 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* xi = t.acts[l].data() + b * n_in;
      double* zrow = t.zs[l].data() + b * n_out;
      for (std::size_t j = 0; j < n_out; ++j) {
        const double* row = p.w[l].data() + j * n_in;
        double s = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) s += row[i] * xi[i];
        zrow[j] = s + p.b[l][j];
      }
    }
    if (l + 1 < nl) {
      t.masks[l].assign(bsz * n_out, 1.0);
      if (dropout_rng)
        for (auto& m : t.masks[l]) m = detail::dropout_scale(dropout_rng, p.dropout);
      t.acts[l + 1].resize(bsz * n_out);
      for (std::size_t k = 0; k < bsz * n_out; ++k)
        t.acts[l + 1][k] = t.zs[l][k] > 0.0 ? t.zs[l][k] * t.masks[l][k] : 0.0;
    } else {
      t.acts[l + 1] = t.zs[l];
    }
  }
  return t;
}

// Backward sweep from output-layer gradients g (bsz x last width, consumed
// in place) into the flat gradient vector, flatten() order.
inline void dense_backward(const NetworkParams& p, const DenseBatch& t, std::vector<double> g,
                           std::span<double> grad) {
  const std::size_t nl = p.w.size();
  const std::size_t bsz = t.acts[0].size() / static_cast<std::size_t>(p.sizes[0]);

  std::vector<std::size_t> w_off(nl), b_off(nl);
  std::size_t off = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    const auto n_in = static_cast<std::size_t>(p.sizes[l]);
    const auto n_out = static_cast<std::size_t>(p.sizes[l + 1]);
    w_off[l] = off;
    off += n_out * n_in;
    b_off[l] = off;
    off += n_out;
  }

  for (std::size_t l = nl; l-- > 0;) {
    const auto n_in = static_cast<std::size_t>(p.sizes[l]);
    const auto n_out = static_cast<std::size_t>(p.sizes[l + 1]);
    double* dw = grad.data() + w_off[l];
    double* db = grad.data() + b_off[l];
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* gr = g.data() + b * n_out;
      const double* ap = t.acts[l].data() + b * n_in;
      for (std::size_t j = 0; j < n_out; ++j) {
        const double gj = gr[j];
        if (gj == 0.0) continue;
        db[j] += gj;
        double* dwr = dw + j * n_in;
        for (std::size_t i = 0; i < n_in; ++i) dwr[i] += gj * ap[i];
      }
    }
    if (l == 0) break;
    std::vector<double> gprev(bsz * n_in, 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* gr = g.data() + b * n_out;
      double* gp = gprev.data() + b * n_in;
      for (std::size_t j = 0; j < n_out; ++j) {
        const double gj = gr[j];
        if (gj == 0.0) continue;
        const double* row = p.w[l].data() + j * n_in;
        for (std::size_t i = 0; i < n_in; ++i) gp[i] += gj * row[i];
      }
    }
    for (std::size_t k = 0; k < bsz * n_in; ++k)
      gprev[k] *= t.zs[l - 1][k] > 0.0 ? t.masks[l - 1][k] : 0.0;
    g = std::move(gprev);
  }
}

}  // namespace detail

// Batched dense forward/backward for pre-training. sigma_dd is treated as a
// recorded value in the NLL: its adjoint is zeroed, so the head's output row
// receives no gradient in this phase.
inline BatchGrad pretrain_batch(const NetworkParams& p, std::span<const double> xs,
                                std::span<const double> y, const PretrainTargets& tg,
                                Rng* dropout_rng) {
  const std::size_t bsz = y.size();
  if (xs.size() != bsz * static_cast<std::size_t>(kNetInputs))
    throw LengthMismatch("pretrain_batch: inputs vs targets");
  const std::size_t nl = p.w.size();
  const detail::DenseBatch tape = detail::dense_forward(p, xs, bsz, dropout_rng);

  const std::vector<double>& z3 = tape.zs[nl - 1];
  const double inv_b = 1.0 / static_cast<double>(bsz);
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  BatchGrad out;
  out.grad.assign(p.n_params(), 0.0);
  std::vector<double> g(bsz * 4, 0.0);
  for (std::size_t b = 0; b < bsz; ++b) {
    const double beta = z3[b * 4 + 0];
    const double s1 = sig(z3[b * 4 + 1]);
    const double s2 = sig(z3[b * 4 + 2]);
    const double s3 = sig(z3[b * 4 + 3]);
    const double sdd = std::max(s1, tg.eps);
    const double res = y[b] - beta;
    const double dvy = s2 - tg.sigma_vy_hat;
    const double dyr = s3 - tg.sigma_yawrate_hat;
    out.loss += inv_b * (dvy * dvy + dyr * dyr) + 0.5 * (std::log(sdd) + res * res / sdd);
    g[b * 4 + 0] = -res / sdd;
    g[b * 4 + 1] = 0.0;
    g[b * 4 + 2] = 2.0 * inv_b * dvy * s2 * (1.0 - s2);
    g[b * 4 + 3] = 2.0 * inv_b * dyr * s3 * (1.0 - s3);
  }
  detail::dense_backward(p, tape, std::move(g), out.grad);
  return out;
}

// Two-term sequence loss: pseudo-measurement regression plus filter output
// regression, both against the filtered reference.
inline double e2e_loss(std::span<const double> beta_me, std::span<const double> beta_dd,
                       std::span<const double> beta_hat) {
  if (beta_me.size() != beta_dd.size() || beta_me.size() != beta_hat.size())
    throw LengthMismatch("e2e_loss: sequence lengths differ");
  const double inv_n = 1.0 / static_cast<double>(beta_me.size());
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < beta_me.size(); ++i) {
    const double d1 = beta_me[i] - beta_dd[i];
    const double d2 = beta_me[i] - beta_hat[i];
    a += d1 * d1;
    b += d2 * d2;
  }
  return inv_n * a + inv_n * b;
}

struct SequenceGrad {
  double loss = 0.0;
  std::vector<double> grad;
  bool ok = true;
};

// One 256-sample (by default) sequence recorded on a single tape: network
// forward and the full UKF recursion per step, warm-started from the first
// yaw-rate measurement of the slice. Numerical failures (non-finite values,
// covariance collapse) mark the sequence skipped rather than throwing.
inline SequenceGrad bptt_sequence(const Trajectory& tr, std::span<const double> beta_ref,
                                  std::size_t start, std::size_t len, const NetworkParams& p,
                                  const NoiseParams& base, const VehicleParams& vp,
                                  const TyreParams& ty, Rng* dropout_rng,
                                  bool detach_beta_hat = false, double sigma_dd_override = 0.0,
                                  const UtParams& ut = {}) {
  if (beta_ref.size() != tr.size())
    throw LengthMismatch("bptt_sequence: reference vs trajectory");
  if (start + len > tr.size() || len == 0)
    throw LengthMismatch("bptt_sequence: slice out of range");

  SequenceGrad out;
  out.grad.assign(p.n_params(), 0.0);
  // relu's branch silently maps non-finite pre-activations to zero, so
  // poisoned parameters must be refused up front rather than trained through.
  const auto all_finite = [](const std::vector<std::vector<double>>& m) {
    for (const auto& layer : m)
      for (double v : layer)
        if (!std::isfinite(v)) return false;
    return true;
  };
  if (!all_finite(p.w) || !all_finite(p.b)) {
    out.ok = false;
    return out;
  }
  try {
    ad::Tape t;
    const TapedNet net = lift_network(t, p);
    const TyreParamsT<ad::Var> tyv = lift_tyre_params(t, ty);

    FilterStateT<ad::Var> s;
    s.mean = Matrix<ad::Var>(2, 1);
    s.mean(0, 0) = ad::lift(t, 0.0);
    s.mean(1, 0) = ad::lift(t, tr.yaw_rate[start]);
    s.cov = Matrix<ad::Var>(2, 2);
    s.cov(0, 0) = ad::lift(t, 0.01);
    s.cov(1, 1) = ad::lift(t, 0.0025);
    s.cov(0, 1) = ad::lift(t, 0.0);
    s.cov(1, 0) = ad::lift(t, 0.0);

    ad::Var acc_dd = ad::lift(t, 0.0);
    ad::Var acc_hat = ad::lift(t, 0.0);
    double xin[kNetInputs], xn[kNetInputs];
    for (std::size_t i = start; i < start + len; ++i) {
      net_input(tr, i, xin);
      normalize(xin, p.scaler, xn);
      const auto o = forward_taped(net, std::span<const double>(xn, kNetInputs),
                                   dropout_rng != nullptr, dropout_rng);
      NoiseParamsT<ad::Var> np{
          o.sigma_vy,
          o.sigma_yawrate,
          ad::lift(t, base.r_ay),
          ad::lift(t, base.r_yawrate),
          ad::lift(t, base.r_fyf),
          ad::lift(t, base.r_fyr),
          sigma_dd_override > 0.0 ? ad::lift(t, sigma_dd_override) : o.sigma_dd};
      const VehicleInputT<ad::Var> u{ad::lift(t, tr.vx[i]), ad::lift(t, tr.delta[i])};
      s = predict_vehicle(s, u, np, vp, tyv, ut);

      ObservationT<ad::Var> z;
      z.ay = ad::lift(t, tr.ay[i]);
      z.yaw_rate = ad::lift(t, tr.yaw_rate[i]);
      z.fyf = ad::lift(t, axle_front(tr.fy, i));
      z.fyr = ad::lift(t, axle_rear(tr.fy, i));
      z.beta_dd = o.beta_dd;
      s = update_vehicle(s, u, z, np, ObservationMask{}, vp, tyv, ut).state;

      ad::Var beta_hat = ad::atan(s.mean(0, 0) / u.vx);
      if (detach_beta_hat) beta_hat = ad::detach(beta_hat);
      const ad::Var rdd = o.beta_dd - beta_ref[i];
      const ad::Var rh = beta_hat - beta_ref[i];
      acc_dd += rdd * rdd;
      acc_hat += rh * rh;
    }
    const ad::Var loss =
        acc_dd / static_cast<double>(len) + acc_hat / static_cast<double>(len);
    out.loss = loss.value();
    auto g = t.gradient(loss.id(), net.param_ids);
    out.grad = std::move(g.g);
  } catch (const NonFiniteGradient&) {
    out.ok = false;
  } catch (const NotPositiveDefinite&) {
    out.ok = false;
  } catch (const SingularInnovation&) {
    out.ok = false;
  }
  if (!out.ok) {
    out.loss = 0.0;
    std::fill(out.grad.begin(), out.grad.end(), 0.0);
  }
  return out;
}

// Double-precision twin of bptt_sequence, same operations in the same
// order, for validation losses and finite-difference oracles.
inline double e2e_sequence_loss(const Trajectory& tr, std::span<const double> beta_ref,
                                std::size_t start, std::size_t len, const NetworkParams& p,
                                const NoiseParams& base, const VehicleParams& vp,
                                const TyreParams& ty, double sigma_dd_override = 0.0,
                                const UtParams& ut = {}) {
  if (beta_ref.size() != tr.size())
    throw LengthMismatch("e2e_sequence_loss: reference vs trajectory");
  if (start + len > tr.size() || len == 0)
    throw LengthMismatch("e2e_sequence_loss: slice out of range");

  FilterState s;
  s.mean = Matd(2, 1);
  s.mean(0, 0) = 0.0;
  s.mean(1, 0) = tr.yaw_rate[start];
  s.cov = Matd(2, 2);
  s.cov(0, 0) = 0.01;
  s.cov(1, 1) = 0.0025;
  s.cov(0, 1) = 0.0;
  s.cov(1, 0) = 0.0;

  double acc_dd = 0.0, acc_hat = 0.0;
  double xin[kNetInputs], xn[kNetInputs];
  for (std::size_t i = start; i < start + len; ++i) {
    net_input(tr, i, xin);
    normalize(xin, p.scaler, xn);
    const NetOutput o = forward(std::span<const double>(xn, kNetInputs), p);
    NoiseParams np = base;
    np.sigma_vy = o.sigma_vy;
    np.sigma_yawrate = o.sigma_yawrate;
    np.sigma_dd = sigma_dd_override > 0.0 ? sigma_dd_override : o.sigma_dd;
    const VehicleInput u{tr.vx[i], tr.delta[i]};
    s = predict_vehicle(s, u, np, vp, ty, ut);

    Observation z;
    z.ay = tr.ay[i];
    z.yaw_rate = tr.yaw_rate[i];
    z.fyf = axle_front(tr.fy, i);
    z.fyr = axle_rear(tr.fy, i);
    z.beta_dd = o.beta_dd;
    s = update_vehicle(s, u, z, np, ObservationMask{}, vp, ty, ut).state;

    const double beta_hat = std::atan(s.mean(0, 0) / u.vx);
    const double rdd = o.beta_dd - beta_ref[i];
    const double rh = beta_hat - beta_ref[i];
    acc_dd += rdd * rdd;
    acc_hat += rh * rh;
  }
  return acc_dd / static_cast<double>(len) + acc_hat / static_cast<double>(len);
}

struct SeqSlice {
  const Trajectory* tr;
  std::span<const double> beta_ref;
  std::size_t start;
  std::size_t len;
};

struct StepResult {
  double loss = 0.0;
  std::vector<double> grad;
  std::size_t skipped = 0;
  bool ok = false;
};

// Mini-batch of sequences: deterministic ordered reduction of per-sequence
// gradients; skipped sequences are excluded from the averages.
inline StepResult bptt_step(std::span<const SeqSlice> batch, const NetworkParams& p,
                            const NoiseParams& base, const VehicleParams& vp,
                            const TyreParams& ty, Rng* dropout_rng,
                            bool detach_beta_hat = false, double sigma_dd_override = 0.0,
                            const UtParams& ut = {}) {
  StepResult r;
  r.grad.assign(p.n_params(), 0.0);
  std::size_t used = 0;
  for (const SeqSlice& s : batch) {
    const SequenceGrad sg = bptt_sequence(*s.tr, s.beta_ref, s.start, s.len, p, base, vp, ty,
                                          dropout_rng, detach_beta_hat, sigma_dd_override, ut);
    if (!sg.ok) {
      ++r.skipped;
      continue;
    }
    r.loss += sg.loss;
    for (std::size_t k = 0; k < r.grad.size(); ++k) r.grad[k] += sg.grad[k];
    ++used;
  }
  if (used > 0) {
    r.ok = true;
    const double inv = 1.0 / static_cast<double>(used);
    r.loss *= inv;
    for (auto& v : r.grad) v *= inv;
  }
  return r;
}

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_update(std::span<double> theta, std::span<const double> g, AdamState& st,
                        double lr) {
  if (st.m.empty()) {
    st.m.assign(theta.size(), 0.0);
    st.v.assign(theta.size(), 0.0);
  }
  if (g.size() != theta.size() || st.m.size() != theta.size())
    throw LengthMismatch("adam_update: shapes differ");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g[k];
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g[k] * g[k];
    theta[k] -= lr * (st.m[k] / c1) / (std::sqrt(st.v[k] / c2) + st.eps);
  }
}

// Global-norm clip: rescales in place, never rotates. Returns the pre-clip
// norm.
inline double clip_gradient(std::span<double> g, double max_norm) {
  double n2 = 0.0;
  for (double v : g) n2 += v * v;
  const double n = std::sqrt(n2);
  if (n > max_norm) {
    const double s = max_norm / n;
    for (auto& v : g) v *= s;
  }
  return n;
}

struct TrainConfig {
  std::vector<int> sizes = hybrid_sizes();
  int batch = 256;
  double lr = 8e-4;
  int pretrain_epochs = 30;
  int e2e_epochs = 30;
  int seq_len = 256;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;
  int patience = 20;
  bool e2e_dropout = false;
  PretrainTargets targets{};
  NoiseParams base = default_noise_params();
  VehicleParams vehicle{};
  TyreParams tyres{};
  UtParams ut{};
};

struct EpochRow {
  int epoch;
  std::string phase;
  double train_loss;
  double val_loss;
  double val_mse;
};

struct TrainResult {
  NetworkParams params;
  std::vector<EpochRow> history;
  double handoff_e2e_val = 0.0;
  double best_e2e_val = 0.0;
  std::size_t skipped = 0;
};

namespace detail {

// Pooled, normalised samples plus the 5 Hz filtered reference.
struct Pool {
  std::vector<double> x;
  std::vector<double> y;
};

inline Pool build_pool(std::span<const Trajectory> set,
                       const std::vector<std::vector<double>>& refs, const Scaler& sc) {
  Pool pool;
  double xin[kNetInputs], xn[kNetInputs];
  for (std::size_t ti = 0; ti < set.size(); ++ti) {
    const Trajectory& tr = set[ti];
    for (std::size_t i = 0; i < tr.size(); ++i) {
      net_input(tr, i, xin);
      normalize(xin, sc, xn);
      pool.x.insert(pool.x.end(), xn, xn + kNetInputs);
      pool.y.push_back(refs[ti][i]);
    }
  }
  return pool;
}

struct PretrainVal {
  double loss = 0.0;
  double mse = 0.0;
};

inline PretrainVal pretrain_validate(const NetworkParams& p, const Pool& pool,
                                     const PretrainTargets& tg) {
  const std::size_t n = pool.y.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  PretrainVal out;
  const std::size_t chunk = 4096;
  std::vector<double> raw;
  for (std::size_t b0 = 0; b0 < n; b0 += chunk) {
    const std::size_t c = std::min(chunk, n - b0);
    raw.resize(c * 4);
    forward_batch_raw(
        std::span<const double>(pool.x.data() + b0 * kNetInputs, c * kNetInputs), c, p, raw);
    for (std::size_t b = 0; b < c; ++b) {
      const double beta = raw[b * 4 + 0];
      const double s1 = sig(raw[b * 4 + 1]);
      const double s2 = sig(raw[b * 4 + 2]);
      const double s3 = sig(raw[b * 4 + 3]);
      const double sdd = std::max(s1, tg.eps);
      const double res = pool.y[b0 + b] - beta;
      const double dvy = s2 - tg.sigma_vy_hat;
      const double dyr = s3 - tg.sigma_yawrate_hat;
      out.loss += inv_n * (dvy * dvy + dyr * dyr) + 0.5 * (std::log(sdd) + res * res / sdd);
      out.mse += inv_n * (dvy * dvy + dyr * dyr + res * res);
    }
  }
  return out;
}

}  // namespace detail

// Two-phase optimisation: batched pre-training with validation early stop,
// then per-sequence BPTT through the filter, both with best-validation
// checkpointing. Fully deterministic for a given seed.
inline TrainResult train(std::span<const Trajectory> train_set,
                         std::span<const Trajectory> val_set, const TrainConfig& cfg) {
  if (train_set.empty() || val_set.empty()) throw EmptySplit("train: empty split");

  TrainResult out;
  NetworkParams p = xavier_init(cfg.sizes, cfg.seed);
  p.scaler = fit_scaler(train_set);

  const auto filter_refs = [](std::span<const Trajectory> set) {
    std::vector<std::vector<double>> refs;
    refs.reserve(set.size());
    for (const Trajectory& tr : set) refs.push_back(zero_phase_lowpass(tr.beta_me));
    return refs;
  };
  const auto train_ref = filter_refs(train_set);
  const auto val_ref = filter_refs(val_set);

  const detail::Pool train_pool = detail::build_pool(train_set, train_ref, p.scaler);
  const detail::Pool val_pool = detail::build_pool(val_set, val_ref, p.scaler);

  auto theta = flatten(p);
  Rng order_rng = Rng::stream(cfg.seed, 1);
  Rng drop_rng = Rng::stream(cfg.seed, 2);

  // Phase 1: pre-training.
  {
    AdamState adam;
    const std::size_t n = train_pool.y.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    const auto bsz = static_cast<std::size_t>(cfg.batch);
    std::vector<double> xb(bsz * kNetInputs), yb(bsz);

    double best_val = std::numeric_limits<double>::infinity();
    auto best_theta = theta;
    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
      for (std::size_t i = n; i > 1; --i)
        std::swap(perm[i - 1], perm[order_rng.below(i)]);
      double tl = 0.0;
      std::size_t nb = 0;
      for (std::size_t b0 = 0; b0 < n; b0 += bsz) {
        const std::size_t c = std::min(bsz, n - b0);
        for (std::size_t b = 0; b < c; ++b) {
          const std::size_t src = perm[b0 + b];
          std::copy_n(train_pool.x.data() + src * kNetInputs, kNetInputs,
                      xb.data() + b * kNetInputs);
          yb[b] = train_pool.y[src];
        }
        assign_flat(p, theta);
        BatchGrad bg = pretrain_batch(p, std::span<const double>(xb.data(), c * kNetInputs),
                                      std::span<const double>(yb.data(), c), cfg.targets,
                                      &drop_rng);
        clip_gradient(bg.grad, cfg.clip_norm);
        adam_update(theta, bg.grad, adam, cfg.lr);
        tl += bg.loss;
        ++nb;
      }
      assign_flat(p, theta);
      const detail::PretrainVal v = detail::pretrain_validate(p, val_pool, cfg.targets);
      out.history.push_back({epoch, "pretrain", tl / static_cast<double>(nb), v.loss, v.mse});
      if (v.loss < best_val) {
        best_val = v.loss;
        best_theta = theta;
        since_best = 0;
      } else if (++since_best > cfg.patience) {
        break;
      }
    }
    if (cfg.pretrain_epochs > 0) theta = best_theta;
    assign_flat(p, theta);
  }

  // Phase 2: end-to-end BPTT through the filter.
  {
    struct Slice {
      std::size_t traj;
      std::size_t start;
    };
    std::vector<Slice> slices;
    const auto sl = static_cast<std::size_t>(cfg.seq_len);
    for (std::size_t ti = 0; ti < train_set.size(); ++ti)
      for (std::size_t s = 0; s + sl <= train_set[ti].size(); s += sl)
        slices.push_back({ti, s});
    if (slices.empty() && cfg.e2e_epochs > 0)
      throw TooShort("train: no trajectory long enough for an e2e sequence");

    const auto e2e_val = [&](const NetworkParams& q) {
      double acc = 0.0;
      for (std::size_t vi = 0; vi < val_set.size(); ++vi)
        acc += e2e_sequence_loss(val_set[vi], val_ref[vi], 0, val_set[vi].size(), q, cfg.base,
                                 cfg.vehicle, cfg.tyres, 0.0, cfg.ut);
      return acc / static_cast<double>(val_set.size());
    };
    out.handoff_e2e_val = e2e_val(p);
    double best = out.handoff_e2e_val;
    auto best_theta = theta;

    AdamState adam;
    for (int epoch = 1; epoch <= cfg.e2e_epochs; ++epoch) {
      for (std::size_t i = slices.size(); i > 1; --i)
        std::swap(slices[i - 1], slices[order_rng.below(i)]);
      double tl = 0.0;
      std::size_t nb = 0;
      for (const Slice& s : slices) {
        assign_flat(p, theta);
        SequenceGrad sg =
            bptt_sequence(train_set[s.traj], train_ref[s.traj], s.start, sl, p, cfg.base,
                          cfg.vehicle, cfg.tyres, cfg.e2e_dropout ? &drop_rng : nullptr);
        if (!sg.ok) {
          ++out.skipped;
          continue;
        }
        clip_gradient(sg.grad, cfg.clip_norm);
        adam_update(theta, sg.grad, adam, cfg.lr);
        tl += sg.loss;
        ++nb;
      }
      assign_flat(p, theta);
      const double vl = e2e_val(p);
      out.history.push_back(
          {epoch, "e2e", nb ? tl / static_cast<double>(nb) : 0.0, vl, vl});
      if (vl < best) {
        best = vl;
        best_theta = theta;
      }
    }
    theta = best_theta;
    assign_flat(p, theta);
    out.best_e2e_val = best;
  }

  out.params = p;
  return out;
}

inline void write_history_csv(const std::string& path, std::span<const EpochRow> rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_history_csv: cannot open " + path);
  f << "epoch,phase,train_loss,val_loss\n";
  char buf[128];
  for (const EpochRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g\n", r.epoch, r.phase.c_str(),
                  r.train_loss, r.val_loss);
    f << buf;
  }
  if (!f) throw IoError("write_history_csv: short write to " + path);
}

}  // namespace sideslip
