#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sideslip/data/trajectory.hpp"
#include "sideslip/errors.hpp"
#include "sideslip/math/rng.hpp"
#include "sideslip/math/tape.hpp"

namespace sideslip {

// Per-channel affine map of the 17 network inputs onto [0,1] over the
// training split. Test-time values may leave the interval; they are never
// clipped.
struct Scaler {
  std::array<double, kNetInputs> lo{};
  std::array<double, kNetInputs> hi{};
};

inline Scaler fit_scaler(std::span<const Trajectory> split) {
  bool any = false;
  Scaler s;
  s.lo.fill(std::numeric_limits<double>::infinity());
  s.hi.fill(-std::numeric_limits<double>::infinity());
  double x[kNetInputs];
  for (const Trajectory& tr : split) {
    for (std::size_t i = 0; i < tr.size(); ++i) {
      any = true;
      net_input(tr, i, x);
      for (int c = 0; c < kNetInputs; ++c) {
        s.lo[c] = std::min(s.lo[c], x[c]);
        s.hi[c] = std::max(s.hi[c], x[c]);
      }
    }
  }
  if (!any) throw EmptySplit("fit_scaler: no samples in split");
  return s;
}

// A constant channel carries no information; it is pinned to the interval
// midpoint so downstream weights see a finite, centred value.
inline void normalize(const double* x, const Scaler& s, double* out) {
  for (int c = 0; c < kNetInputs; ++c) {
    const double span = s.hi[c] - s.lo[c];
    out[c] = span > 0.0 ? (x[c] - s.lo[c]) / span : 0.5;
  }
}

inline void denormalize(const double* z, const Scaler& s, double* out) {
  for (int c = 0; c < kNetInputs; ++c) out[c] = s.lo[c] + z[c] * (s.hi[c] - s.lo[c]);
}

// Fully connected network. w[l] is row-major sizes[l+1] x sizes[l]; the
// paper's 1x1-kernel stride-1 convolutions are exactly this map applied per
// sample, so the dense form is the implementation.
struct NetworkParams {
  std::vector<int> sizes;
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  Scaler scaler{};

  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
      n += static_cast<std::size_t>(sizes[l + 1]) * (static_cast<std::size_t>(sizes[l]) + 1);
    return n;
  }
};

inline std::vector<int> hybrid_sizes() { return {17, 200, 100, 4}; }
inline std::vector<int> baseline_sizes(int outputs) { return {17, 250, 125, outputs}; }

// Uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero, one rng stream
// so the whole parameter vector is reproducible from the seed alone.
inline NetworkParams xavier_init(std::span<const int> sizes, std::uint64_t seed,
                                 double dropout = 0.2) {
  NetworkParams p;
  p.sizes.assign(sizes.begin(), sizes.end());
  p.dropout = dropout;
  p.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
    const auto n_in = static_cast<std::size_t>(p.sizes[l]);
    const auto n_out = static_cast<std::size_t>(p.sizes[l + 1]);
    const double bound = std::sqrt(6.0 / (static_cast<double>(n_in) + static_cast<double>(n_out)));
    std::vector<double> w(n_out * n_in);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    p.w.push_back(std::move(w));
    p.b.emplace_back(n_out, 0.0);
  }
  return p;
}

inline NetworkParams xavier_init(const std::vector<int>& sizes, std::uint64_t seed,
                                 double dropout = 0.2) {
  return xavier_init(std::span<const int>(sizes), seed, dropout);
}

// Flat parameter order, shared by the optimiser and the tape lift:
// per layer, weights row-major then biases.
inline std::vector<double> flatten(const NetworkParams& p) {
  std::vector<double> out;
  out.reserve(p.n_params());
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    out.insert(out.end(), p.w[l].begin(), p.w[l].end());
    out.insert(out.end(), p.b[l].begin(), p.b[l].end());
  }
  return out;
}

inline void assign_flat(NetworkParams& p, std::span<const double> theta) {
  if (theta.size() != p.n_params()) throw LengthMismatch("assign_flat: wrong parameter count");
  std::size_t k = 0;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (auto& v : p.w[l]) v = theta[k++];
    for (auto& v : p.b[l]) v = theta[k++];
  }
}

template <class S>
struct NetOutputT {
  S beta_dd;
  S sigma_dd;
  S sigma_vy;
  S sigma_yawrate;
};
using NetOutput = NetOutputT<double>;

namespace detail {

// One dropout decision per hidden neuron, in layer-major neuron order; the
// taped path consumes the same stream so masks agree across paths.
inline double dropout_scale(Rng* rng, double rate) {
  return rng->uniform01() >= rate ? 1.0 / (1.0 - rate) : 0.0;
}

}  // namespace detail

// Raw affine outputs (no output nonlinearity). In train mode, inverted
// dropout at p.dropout is applied to hidden activations only.
inline void forward_raw(std::span<const double> x, const NetworkParams& p, bool train, Rng* rng,
                        std::span<double> out) {
  const std::size_t n_layers = p.w.size();
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto n_in = static_cast<std::size_t>(p.sizes[l]);
    const auto n_out = static_cast<std::size_t>(p.sizes[l + 1]);
    next.assign(n_out, 0.0);
    const double* w = p.w[l].data();
    for (std::size_t j = 0; j < n_out; ++j) {
      double s = 0.0;
      const double* row = w + j * n_in;
      for (std::size_t i = 0; i < n_in; ++i) s += row[i] * cur[i];
      next[j] = s + p.b[l][j];
    }
    if (l + 1 < n_layers) {
      for (auto& v : next) v = v > 0.0 ? v : 0.0;
      if (train)
        for (auto& v : next) v *= detail::dropout_scale(rng, p.dropout);
    }
    cur.swap(next);
  }
  for (std::size_t j = 0; j < cur.size(); ++j) out[j] = cur[j];
}

// Hybrid head: beta_dd unsquashed, sigmoid on the three sigma outputs so
// they cannot leave (0,1).
inline NetOutput forward(std::span<const double> x, const NetworkParams& p, bool train = false,
                         Rng* rng = nullptr) {
  std::array<double, 4> raw;
  forward_raw(x, p, train, rng, raw);
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  return {raw[0], sig(raw[1]), sig(raw[2]), sig(raw[3])};
}

// Sequence evaluation in the convolutional traversal (per output channel,
// slide over samples). Kernel size 1 and stride 1 mean no temporal mixing,
// so each (sample, neuron) dot product is the per-sample one, bit for bit.
inline void forward_batch_raw(std::span<const double> xs, std::size_t n, const NetworkParams& p,
                              std::span<double> out) {
  const std::size_t n_layers = p.w.size();
  std::vector<double> cur(xs.begin(), xs.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto n_in = static_cast<std::size_t>(p.sizes[l]);
    const auto n_out = static_cast<std::size_t>(p.sizes[l + 1]);
    next.assign(n * n_out, 0.0);
    const bool hidden = l + 1 < n_layers;
    for (std::size_t j = 0; j < n_out; ++j) {
      const double* row = p.w[l].data() + j * n_in;
      const double bias = p.b[l][j];
      for (std::size_t t = 0; t < n; ++t) {
        const double* xi = cur.data() + t * n_in;
        double s = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) s += row[i] * xi[i];
        const double v = s + bias;
        next[t * n_out + j] = hidden ? (v > 0.0 ? v : 0.0) : v;
      }
    }
    cur.swap(next);
  }
  std::memcpy(out.data(), cur.data(), cur.size() * sizeof(double));
}

// Network parameters lifted onto a tape as leaves, in flatten() order, so a
// GradientVector over param_ids lines up with the flat optimiser vector.
// Each weight row and bias block occupies contiguous ids for dot_range.
struct TapedNet {
  ad::Tape* tape = nullptr;
  const NetworkParams* shape = nullptr;
  std::vector<ad::Tape::Id> param_ids;
  struct LayerIds {
    ad::Tape::Id w0;
    ad::Tape::Id b0;
  };
  std::vector<LayerIds> layers;
};

inline TapedNet lift_network(ad::Tape& t, const NetworkParams& p) {
  TapedNet net;
  net.tape = &t;
  net.shape = &p;
  net.param_ids.reserve(p.n_params());
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    TapedNet::LayerIds ids{};
    ids.w0 = t.leaf(p.w[l][0]);
    net.param_ids.push_back(ids.w0);
    for (std::size_t k = 1; k < p.w[l].size(); ++k) net.param_ids.push_back(t.leaf(p.w[l][k]));
    ids.b0 = t.leaf(p.b[l][0]);
    net.param_ids.push_back(ids.b0);
    for (std::size_t k = 1; k < p.b[l].size(); ++k) net.param_ids.push_back(t.leaf(p.b[l][k]));
    net.layers.push_back(ids);
  }
  return net;
}

// Tape-recorded forward pass. Node emission is phased (all dots, all bias
// adds, all activations) so every layer's activations occupy a contiguous
// id block and the next layer can use fused dot_range nodes. Accumulation
// order matches forward_raw, so values agree bit for bit.
inline NetOutputT<ad::Var> forward_taped(const TapedNet& net, std::span<const double> x,
                                         bool train = false, Rng* rng = nullptr) {
  ad::Tape& t = *net.tape;
  const NetworkParams& p = *net.shape;
  const std::size_t n_layers = p.w.size();

  ad::Tape::Id in0 = t.constant(x[0]);
  for (std::size_t i = 1; i < x.size(); ++i) t.constant(x[i]);

  std::vector<ad::Tape::Id> dots, acts;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto n_in = static_cast<std::uint32_t>(p.sizes[l]);
    const auto n_out = static_cast<std::size_t>(p.sizes[l + 1]);
    dots.clear();
    for (std::size_t j = 0; j < n_out; ++j)
      dots.push_back(t.dot_range(net.layers[l].w0 + static_cast<ad::Tape::Id>(j * n_in), in0, n_in));
    acts.clear();
    for (std::size_t j = 0; j < n_out; ++j) {
      const ad::Var pre = ad::make_var(t, dots[j], t.value(dots[j])) +
                          ad::make_var(t, net.layers[l].b0 + static_cast<ad::Tape::Id>(j),
                                       t.value(net.layers[l].b0 + static_cast<ad::Tape::Id>(j)));
      acts.push_back(pre.id());
    }
    if (l + 1 < n_layers) {
      ad::Tape::Id r0 = 0;
      for (std::size_t j = 0; j < n_out; ++j) {
        const ad::Var r = ad::relu(ad::make_var(t, acts[j], t.value(acts[j])));
        if (j == 0) r0 = r.id();
      }
      if (train) {
        ad::Tape::Id m0 = t.constant(detail::dropout_scale(rng, p.dropout));
        for (std::size_t j = 1; j < n_out; ++j) t.constant(detail::dropout_scale(rng, p.dropout));
        ad::Tape::Id d0 = 0;
        for (std::size_t j = 0; j < n_out; ++j) {
          const ad::Var d =
              ad::make_var(t, r0 + static_cast<ad::Tape::Id>(j), t.value(r0 + static_cast<ad::Tape::Id>(j))) *
              ad::make_var(t, m0 + static_cast<ad::Tape::Id>(j), t.value(m0 + static_cast<ad::Tape::Id>(j)));
          if (j == 0) d0 = d.id();
        }
        in0 = d0;
      } else {
        in0 = r0;
      }
    }
  }

  const auto at = [&](std::size_t j) { return ad::make_var(t, acts[j], t.value(acts[j])); };
  return {at(0), ad::sigmoid(at(1)), ad::sigmoid(at(2)), ad::sigmoid(at(3))};
}

// Weight file: 8-byte little-endian header length, JSON-text header (layer
// sizes, seed, dropout, scaler), then the flat parameter vector as raw
// little-endian doubles.
inline void save_network(const NetworkParams& p, const std::string& path) {
  static_assert(std::endian::native == std::endian::little);
  nlohmann::json j;
  j["sizes"] = p.sizes;
  j["dropout"] = p.dropout;
  j["seed"] = p.seed;
  j["scaler"]["lo"] = std::vector<double>(p.scaler.lo.begin(), p.scaler.lo.end());
  j["scaler"]["hi"] = std::vector<double>(p.scaler.hi.begin(), p.scaler.hi.end());
  const std::string header = j.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_network: cannot open " + path);
  const std::uint64_t len = header.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto theta = flatten(p);
  f.write(reinterpret_cast<const char*>(theta.data()),
          static_cast<std::streamsize>(theta.size() * sizeof(double)));
  if (!f) throw IoError("save_network: short write to " + path);
}

inline NetworkParams load_network(const std::string& path) {
  static_assert(std::endian::native == std::endian::little);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_network: cannot open " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || len == 0 || len > (1u << 20)) throw ParseError("load_network: bad header length");
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw ParseError("load_network: truncated header");

  NetworkParams p;
  try {
    const auto j = nlohmann::json::parse(header);
    p.sizes = j.at("sizes").get<std::vector<int>>();
    p.dropout = j.at("dropout").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    const auto lo = j.at("scaler").at("lo").get<std::vector<double>>();
    const auto hi = j.at("scaler").at("hi").get<std::vector<double>>();
    if (lo.size() != kNetInputs || hi.size() != kNetInputs)
      throw ParseError("load_network: scaler channel count");
    std::copy(lo.begin(), lo.end(), p.scaler.lo.begin());
    std::copy(hi.begin(), hi.end(), p.scaler.hi.begin());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_network: ") + e.what());
  }
  if (p.sizes.size() < 2) throw ParseError("load_network: need at least two layer sizes");

  for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
    p.w.emplace_back(static_cast<std::size_t>(p.sizes[l + 1]) * static_cast<std::size_t>(p.sizes[l]));
    p.b.emplace_back(static_cast<std::size_t>(p.sizes[l + 1]));
  }
  std::vector<double> theta(p.n_params());
  f.read(reinterpret_cast<char*>(theta.data()),
         static_cast<std::streamsize>(theta.size() * sizeof(double)));
  if (!f) throw IoError("load_network: truncated payload");
  assign_flat(p, theta);
  return p;
}

}  // namespace sideslip
