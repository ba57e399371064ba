#pragma once

// Tape-based reverse-mode differentiation for scalar expressions.
//
// A Var is either a constant (id < 0) or a node on the active Tape. Only
// operations touching at least one non-constant operand are recorded, so
// mixing Var with plain doubles costs nothing on the tape. The scalar is
// usable inside fixed-size Eigen matrices (see NumTraits below), which lets
// the kinematics templates in geom/skeleton run on Var unchanged.

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace mocap::nn {

class Tape {
 public:
  struct Node {
    int a = -1;
    int b = -1;
    double da = 0.0;
    double db = 0.0;
  };

  int push(int a, double da, int b, double db) {
    nodes_.push_back(Node{a, b, da, db});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int leaf() { return push(-1, 0.0, -1, 0.0); }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Adjoints of every node with respect to `output`.
  std::vector<double> adjoints(int output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output < 0) return adj;
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (int i = output; i >= 0; --i) {
      const double g = adj[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.a >= 0) adj[static_cast<std::size_t>(n.a)] += g * n.da;
      if (n.b >= 0) adj[static_cast<std::size_t>(n.b)] += g * n.db;
    }
    return adj;
  }

  static Tape*& active() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

 private:
  std::vector<Node> nodes_;
};

// Installs a tape as the thread's active tape for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

struct Var {
  double v = 0.0;
  int id = -1;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit constants are intended
  Var(double value, int node) : v(value), id(node) {}

  static Var variable(double value) { return Var(value, Tape::active()->leaf()); }

  double value() const { return v; }
  bool is_constant() const { return id < 0; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);
};

namespace detail {
inline Var unary(double value, const Var& a, double da) {
  if (a.id < 0) return Var(value);
  return Var(value, Tape::active()->push(a.id, da, -1, 0.0));
}
inline Var binary(double value, const Var& a, double da, const Var& b, double db) {
  if (a.id < 0 && b.id < 0) return Var(value);
  if (a.id < 0) return Var(value, Tape::active()->push(b.id, db, -1, 0.0));
  if (b.id < 0) return Var(value, Tape::active()->push(a.id, da, -1, 0.0));
  return Var(value, Tape::active()->push(a.id, da, b.id, db));
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(a.v + b.v, a, 1.0, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(a.v - b.v, a, 1.0, b, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary(a.v * b.v, a, b.v, b, a.v); }
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.v;
  return detail::binary(a.v * inv, a, inv, b, -a.v * inv * inv);
}
inline Var operator-(const Var& a) { return detail::unary(-a.v, a, -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }
inline bool operator==(const Var& a, const Var& b) { return a.v == b.v; }
inline bool operator!=(const Var& a, const Var& b) { return a.v != b.v; }

inline Var sqrt(const Var& a) {
  const double r = std::sqrt(a.v);
  return detail::unary(r, a, r > 0.0 ? 0.5 / r : 0.0);
}
inline Var exp(const Var& a) {
  const double e = std::exp(a.v);
  return detail::unary(e, a, e);
}
inline Var log(const Var& a) { return detail::unary(std::log(a.v), a, 1.0 / a.v); }
inline Var sin(const Var& a) { return detail::unary(std::sin(a.v), a, std::cos(a.v)); }
inline Var cos(const Var& a) { return detail::unary(std::cos(a.v), a, -std::sin(a.v)); }
inline Var tanh(const Var& a) {
  const double t = std::tanh(a.v);
  return detail::unary(t, a, 1.0 - t * t);
}
inline Var abs(const Var& a) { return detail::unary(std::abs(a.v), a, a.v >= 0.0 ? 1.0 : -1.0); }
inline Var atan2(const Var& y, const Var& x) {
  const double d = x.v * x.v + y.v * y.v;
  return detail::binary(std::atan2(y.v, x.v), y, x.v / d, x, -y.v / d);
}
inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline bool isfinite(const Var& a) { return std::isfinite(a.v); }

inline double scalar_value(const Var& x) { return x.v; }

}  // namespace mocap::nn

namespace Eigen {
template <>
struct NumTraits<mocap::nn::Var> : NumTraits<double> {
  using Real = mocap::nn::Var;
  using NonInteger = mocap::nn::Var;
  using Nested = mocap::nn::Var;
  using Literal = mocap::nn::Var;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3
  };
};
}  // namespace Eigen
