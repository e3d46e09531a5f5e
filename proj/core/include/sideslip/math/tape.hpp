#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sideslip/errors.hpp"

namespace sideslip::ad {

enum class Op : std::uint8_t {
  kConst,
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kSqrt,
  kAbs,
  kSin,
  kCos,
  kTan,
  kAtan,
  kExp,
  kLog,
  kRelu,
  kSigmoid,
  kMax,
  kMin,
  kDetach,
  kDotRange,
};

// Gradient of one scalar output with respect to an ordered parameter set.
// Entry i belongs to the i-th registered parameter leaf.
struct GradientVector {
  std::vector<double> g;

  std::size_t size() const { return g.size(); }
  double operator[](std::size_t i) const { return g[i]; }
  double norm() const {
    double s = 0.0;
    for (double v : g) s += v * v;
    return std::sqrt(s);
  }
};

// Record-only reverse-mode tape. Scalar nodes carry analytic local partials;
// dense layer contractions are recorded as fused dot nodes over contiguous id
// ranges, whose partials are the opposite operand's recorded forward values.
class Tape {
 public:
  using Id = std::uint32_t;

  Id constant(double v) { return push(Op::kConst, 0, 0, 0, v, 0.0, 0.0); }
  Id leaf(double v) { return push(Op::kLeaf, 0, 0, 0, v, 0.0, 0.0); }

  Id record1(Op op, Id a, double v, double da) {
    return push(op, a, 0, 0, v, da, 0.0);
  }
  Id record2(Op op, Id a, Id b, double v, double da, double db) {
    return push(op, a, b, 0, v, da, db);
  }

  // sum_i vals[a0+i] * vals[b0+i], n >= 1.
  Id dot_range(Id a0, Id b0, std::uint32_t n) {
    double s = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) s += vals_[a0 + i] * vals_[b0 + i];
    return push(Op::kDotRange, a0, b0, n, s, 0.0, 0.0);
  }

  double value(Id id) const { return vals_[id]; }
  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    vals_.clear();
    part_.clear();
  }

  // Recomputes every node value from the recorded structure, in order.
  // Identical arithmetic, identical order: the result is bit-exact.
  std::vector<double> replay() const {
    std::vector<double> v(vals_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& nd = nodes_[i];
      switch (nd.op) {
        case Op::kConst:
        case Op::kLeaf: v[i] = vals_[i]; break;
        case Op::kAdd: v[i] = v[nd.a] + v[nd.b]; break;
        case Op::kSub: v[i] = v[nd.a] - v[nd.b]; break;
        case Op::kMul: v[i] = v[nd.a] * v[nd.b]; break;
        case Op::kDiv: v[i] = v[nd.a] / v[nd.b]; break;
        case Op::kNeg: v[i] = -v[nd.a]; break;
        case Op::kSqrt: v[i] = std::sqrt(v[nd.a]); break;
        case Op::kAbs: v[i] = std::fabs(v[nd.a]); break;
        case Op::kSin: v[i] = std::sin(v[nd.a]); break;
        case Op::kCos: v[i] = std::cos(v[nd.a]); break;
        case Op::kTan: v[i] = std::tan(v[nd.a]); break;
        case Op::kAtan: v[i] = std::atan(v[nd.a]); break;
        case Op::kExp: v[i] = std::exp(v[nd.a]); break;
        case Op::kLog: v[i] = std::log(v[nd.a]); break;
        case Op::kRelu: v[i] = v[nd.a] > 0.0 ? v[nd.a] : 0.0; break;
        case Op::kSigmoid: v[i] = 1.0 / (1.0 + std::exp(-v[nd.a])); break;
        case Op::kMax: v[i] = v[nd.a] >= v[nd.b] ? v[nd.a] : v[nd.b]; break;
        case Op::kMin: v[i] = v[nd.a] <= v[nd.b] ? v[nd.a] : v[nd.b]; break;
        case Op::kDetach: v[i] = v[nd.a]; break;
        case Op::kDotRange: {
          double s = 0.0;
          for (std::uint32_t k = 0; k < nd.n; ++k) s += v[nd.a + k] * v[nd.b + k];
          v[i] = s;
          break;
        }
      }
    }
    return v;
  }

  // Adjoints of every node with respect to the seed node.
  std::vector<double> backward(Id seed) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (nodes_.empty()) return adj;
    adj[seed] = 1.0;
    for (std::size_t i = seed + 1; i-- > 0;) {
      const double a = adj[i];
      if (a == 0.0) continue;
      const Node& nd = nodes_[i];
      switch (nd.op) {
        case Op::kConst:
        case Op::kLeaf: break;
        case Op::kDotRange:
          for (std::uint32_t k = 0; k < nd.n; ++k) {
            adj[nd.a + k] += a * vals_[nd.b + k];
            adj[nd.b + k] += a * vals_[nd.a + k];
          }
          break;
        default: {
          const double* p = &part_[2 * i];
          adj[nd.a] += a * p[0];
          if (is_binary(nd.op)) adj[nd.b] += a * p[1];
          break;
        }
      }
    }
    for (double v : adj)
      if (!std::isfinite(v)) throw NonFiniteGradient("non-finite adjoint in backward pass");
    return adj;
  }

  GradientVector gradient(Id seed, std::span<const Id> params) const {
    const std::vector<double> adj = backward(seed);
    GradientVector out;
    out.g.reserve(params.size());
    for (Id p : params) out.g.push_back(adj[p]);
    return out;
  }

 private:
  struct Node {
    Op op;
    Id a = 0;
    Id b = 0;
    std::uint32_t n = 0;
  };

  static bool is_binary(Op op) {
    switch (op) {
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv:
      case Op::kMax:
      case Op::kMin: return true;
      default: return false;
    }
  }

  Id push(Op op, Id a, Id b, std::uint32_t n, double v, double da, double db) {
    const Id id = static_cast<Id>(nodes_.size());
    nodes_.push_back({op, a, b, n});
    vals_.push_back(v);
    part_.push_back(da);
    part_.push_back(db);
    return id;
  }

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> part_;  // two local partials per node
};

// Handle to a tape node. Arithmetic on Var records onto its tape; mixing
// operands from different tapes is undefined (asserted in debug builds).
class Var {
 public:
  Var() = default;
  Var(Tape& t, Tape::Id id) : t_(&t), id_(id), v_(t.value(id)) {}

  double value() const { return v_; }
  Tape::Id id() const { return id_; }
  Tape* tape() const { return t_; }

 private:
  Tape* t_ = nullptr;
  Tape::Id id_ = 0;
  double v_ = 0.0;

  friend Var make_var(Tape& t, Tape::Id id, double v);
};

inline Var make_var(Tape& t, Tape::Id id, double v) {
  Var x;
  x.t_ = &t;
  x.id_ = id;
  x.v_ = v;
  return x;
}

inline Var lift(Tape& t, double c) { return make_var(t, t.constant(c), c); }
inline Var leaf(Tape& t, double v) { return make_var(t, t.leaf(v), v); }

inline Var operator+(const Var& a, const Var& b) {
  assert(a.tape() == b.tape());
  Tape& t = *a.tape();
  const double v = a.value() + b.value();
  return make_var(t, t.record2(Op::kAdd, a.id(), b.id(), v, 1.0, 1.0), v);
}
inline Var operator-(const Var& a, const Var& b) {
  assert(a.tape() == b.tape());
  Tape& t = *a.tape();
  const double v = a.value() - b.value();
  return make_var(t, t.record2(Op::kSub, a.id(), b.id(), v, 1.0, -1.0), v);
}
inline Var operator*(const Var& a, const Var& b) {
  assert(a.tape() == b.tape());
  Tape& t = *a.tape();
  const double v = a.value() * b.value();
  return make_var(t, t.record2(Op::kMul, a.id(), b.id(), v, b.value(), a.value()), v);
}
inline Var operator/(const Var& a, const Var& b) {
  assert(a.tape() == b.tape());
  Tape& t = *a.tape();
  const double v = a.value() / b.value();
  const double ib = 1.0 / b.value();
  return make_var(t, t.record2(Op::kDiv, a.id(), b.id(), v, ib, -v * ib), v);
}
inline Var operator-(const Var& a) {
  Tape& t = *a.tape();
  return make_var(t, t.record1(Op::kNeg, a.id(), -a.value(), -1.0), -a.value());
}

inline Var operator+(const Var& a, double c) { return a + lift(*a.tape(), c); }
inline Var operator+(double c, const Var& a) { return lift(*a.tape(), c) + a; }
inline Var operator-(const Var& a, double c) { return a - lift(*a.tape(), c); }
inline Var operator-(double c, const Var& a) { return lift(*a.tape(), c) - a; }
inline Var operator*(const Var& a, double c) { return a * lift(*a.tape(), c); }
inline Var operator*(double c, const Var& a) { return lift(*a.tape(), c) * a; }
inline Var operator/(const Var& a, double c) { return a / lift(*a.tape(), c); }
inline Var operator/(double c, const Var& a) { return lift(*a.tape(), c) / a; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var sqrt(const Var& a) {
  Tape& t = *a.tape();
  const double v = std::sqrt(a.value());
  return make_var(t, t.record1(Op::kSqrt, a.id(), v, 0.5 / v), v);
}
inline Var abs(const Var& a) {
  Tape& t = *a.tape();
  const double v = std::fabs(a.value());
  return make_var(t, t.record1(Op::kAbs, a.id(), v, a.value() >= 0.0 ? 1.0 : -1.0), v);
}
inline Var sin(const Var& a) {
  Tape& t = *a.tape();
  return make_var(t, t.record1(Op::kSin, a.id(), std::sin(a.value()), std::cos(a.value())),
                  std::sin(a.value()));
}
inline Var cos(const Var& a) {
  Tape& t = *a.tape();
  return make_var(t, t.record1(Op::kCos, a.id(), std::cos(a.value()), -std::sin(a.value())),
                  std::cos(a.value()));
}
inline Var tan(const Var& a) {
  Tape& t = *a.tape();
  const double v = std::tan(a.value());
  return make_var(t, t.record1(Op::kTan, a.id(), v, 1.0 + v * v), v);
}
inline Var atan(const Var& a) {
  Tape& t = *a.tape();
  const double v = std::atan(a.value());
  return make_var(t, t.record1(Op::kAtan, a.id(), v, 1.0 / (1.0 + a.value() * a.value())), v);
}
inline Var exp(const Var& a) {
  Tape& t = *a.tape();
  const double v = std::exp(a.value());
  return make_var(t, t.record1(Op::kExp, a.id(), v, v), v);
}
inline Var log(const Var& a) {
  Tape& t = *a.tape();
  const double v = std::log(a.value());
  return make_var(t, t.record1(Op::kLog, a.id(), v, 1.0 / a.value()), v);
}
inline Var relu(const Var& a) {
  Tape& t = *a.tape();
  const bool on = a.value() > 0.0;
  return make_var(t, t.record1(Op::kRelu, a.id(), on ? a.value() : 0.0, on ? 1.0 : 0.0),
                  on ? a.value() : 0.0);
}
inline Var sigmoid(const Var& a) {
  Tape& t = *a.tape();
  const double v = 1.0 / (1.0 + std::exp(-a.value()));
  return make_var(t, t.record1(Op::kSigmoid, a.id(), v, v * (1.0 - v)), v);
}
inline Var max(const Var& a, const Var& b) {
  assert(a.tape() == b.tape());
  Tape& t = *a.tape();
  const bool ga = a.value() >= b.value();
  const double v = ga ? a.value() : b.value();
  return make_var(t, t.record2(Op::kMax, a.id(), b.id(), v, ga ? 1.0 : 0.0, ga ? 0.0 : 1.0), v);
}
inline Var min(const Var& a, const Var& b) {
  assert(a.tape() == b.tape());
  Tape& t = *a.tape();
  const bool la = a.value() <= b.value();
  const double v = la ? a.value() : b.value();
  return make_var(t, t.record2(Op::kMin, a.id(), b.id(), v, la ? 1.0 : 0.0, la ? 0.0 : 1.0), v);
}
inline Var max(const Var& a, double c) { return max(a, lift(*a.tape(), c)); }
inline Var max(double c, const Var& a) { return max(lift(*a.tape(), c), a); }
inline Var min(const Var& a, double c) { return min(a, lift(*a.tape(), c)); }
inline Var min(double c, const Var& a) { return min(lift(*a.tape(), c), a); }

// Value passthrough with zero local partial: stops gradient flow.
inline Var detach(const Var& a) {
  Tape& t = *a.tape();
  return make_var(t, t.record1(Op::kDetach, a.id(), a.value(), 0.0), a.value());
}

// Double-path counterparts so templated code works for both scalar types.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double detach(double x) { return x; }

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

// Fresh typed constant "like" an existing scalar: plain for double, a
// constant node on the prototype's tape for Var.
inline double scalar_like(double, double v) { return v; }
inline Var scalar_like(const Var& proto, double v) { return lift(*proto.tape(), v); }

}  // namespace sideslip::ad
