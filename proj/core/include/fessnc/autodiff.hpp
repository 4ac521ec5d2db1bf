#pragma once

// Minimal differentiation engine: a reverse-mode tape for parameter
// gradients, forward-mode duals for directional derivatives, and their
// combination (duals whose components are tape variables) for losses that
// contain input gradients of the fields they train.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fessnc::ad {

class Tape;

// -----------------------------------------------------------------------------
// Var: a scalar on a reverse-mode tape. A Var with tape == nullptr is a plain
// constant; arithmetic folds constants so templated code can mix literals in.
// -----------------------------------------------------------------------------
struct Var {
  Tape* tape = nullptr;
  std::int32_t idx = -1;
  double val = 0.0;

  Var() = default;
  Var(double v) : val(v) {}  // NOLINT: implicit by design, constants are Vars

  [[nodiscard]] bool is_const() const { return tape == nullptr; }
};

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,   // a + b
  kSub,   // a - b
  kMul,   // a * b
  kDiv,   // a / b
  kAddC,  // a + c
  kMulC,  // a * c
  kCSub,  // c - a
  kCDiv,  // c / a
  kNeg,
  kSin,
  kCos,
  kExp,
  kLog,
  kTanh,
  kSqrt,
  kRelu,        // max(0, a)
  kElu,         // a > 0 ? a : exp(a) - 1
  kSrelu,       // smoothed relu, knee width in payload c
  kSreluGrad,   // its first derivative (appears when duals ride on the tape)
  kSreluGrad2,  // its second derivative
  kPowC,        // a ^ c
};

struct Node {
  Op op;
  std::int32_t a = -1;
  std::int32_t b = -1;
  double c = 0.0;
  double val = 0.0;
};

// Smoothed ReLU: identically 0 for z <= 0, slope-1 affine beyond the knee
// width, quintic ramp in between. C^2, convex, nondecreasing, srelu(0) == 0.
double srelu(double z, double knee);
double srelu_grad(double z, double knee);
double srelu_grad2(double z, double knee);
double srelu_grad3(double z, double knee);  // defined a.e. (piecewise linear grad2)

double elu(double z);

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(double v) {
    Var out;
    out.tape = this;
    out.idx = push(Op::kLeaf, -1, -1, 0.0, v);
    out.val = v;
    return out;
  }

  void clear() { nodes_.clear(); }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from `output`; afterwards adjoint(v) is d output / d v.
  void backward(const Var& output);
  [[nodiscard]] double adjoint(const Var& v) const;

  std::vector<double> gradient(const Var& output, std::span<const Var> wrt);

  std::int32_t push(Op op, std::int32_t a, std::int32_t b, double c, double val) {
    nodes_.push_back(Node{op, a, b, c, val});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  [[nodiscard]] const Node& node(std::int32_t i) const { return nodes_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<Node> nodes_;
  std::vector<double> adj_;
};

// Reentrancy-safe reuse of tape arenas: acquire from a thread-local free
// list, return on scope exit. Keeps the hot per-point paths allocation-free.
class ScopedTape {
 public:
  ScopedTape();
  ~ScopedTape();
  ScopedTape(const ScopedTape&) = delete;
  ScopedTape& operator=(const ScopedTape&) = delete;
  Tape& operator*() { return *tape_; }
  Tape* operator->() { return tape_; }

 private:
  Tape* tape_;
};

namespace detail {

inline Tape* owner(const Var& a, const Var& b) {
  if (a.tape && b.tape && a.tape != b.tape) {
    throw std::invalid_argument("autodiff: operands live on different tapes");
  }
  return a.tape ? a.tape : b.tape;
}

inline Var record(Tape* t, Op op, std::int32_t a, std::int32_t b, double c, double val) {
  Var out;
  out.tape = t;
  out.idx = t->push(op, a, b, c, val);
  out.val = val;
  return out;
}

inline Var unary(const Var& x, Op op, double c, double val) {
  Var out;
  out.tape = x.tape;
  out.idx = x.tape->push(op, x.idx, -1, c, val);
  out.val = val;
  return out;
}

}  // namespace detail

// ---- Var arithmetic ---------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  if (a.is_const() && b.is_const()) return Var(a.val + b.val);
  if (a.is_const()) {
    if (a.val == 0.0) return b;  // structural zeros appear in dual tangents; fold them
    return detail::unary(b, Op::kAddC, a.val, b.val + a.val);
  }
  if (b.is_const()) {
    if (b.val == 0.0) return a;
    return detail::unary(a, Op::kAddC, b.val, a.val + b.val);
  }
  return detail::record(detail::owner(a, b), Op::kAdd, a.idx, b.idx, 0.0, a.val + b.val);
}

inline Var operator-(const Var& a, const Var& b) {
  if (a.is_const() && b.is_const()) return Var(a.val - b.val);
  if (a.is_const()) return detail::unary(b, Op::kCSub, a.val, a.val - b.val);
  if (b.is_const()) {
    if (b.val == 0.0) return a;
    return detail::unary(a, Op::kAddC, -b.val, a.val - b.val);
  }
  return detail::record(detail::owner(a, b), Op::kSub, a.idx, b.idx, 0.0, a.val - b.val);
}

inline Var operator*(const Var& a, const Var& b) {
  if (a.is_const() && b.is_const()) return Var(a.val * b.val);
  if (a.is_const()) {
    if (a.val == 0.0) return Var(0.0);
    if (a.val == 1.0) return b;
    return detail::unary(b, Op::kMulC, a.val, b.val * a.val);
  }
  if (b.is_const()) {
    if (b.val == 0.0) return Var(0.0);
    if (b.val == 1.0) return a;
    return detail::unary(a, Op::kMulC, b.val, a.val * b.val);
  }
  return detail::record(detail::owner(a, b), Op::kMul, a.idx, b.idx, 0.0, a.val * b.val);
}

inline Var operator/(const Var& a, const Var& b) {
  if (a.is_const() && b.is_const()) return Var(a.val / b.val);
  if (a.is_const()) {
    if (a.val == 0.0) return Var(0.0);
    return detail::unary(b, Op::kCDiv, a.val, a.val / b.val);
  }
  if (b.is_const()) {
    if (b.val == 1.0) return a;
    return detail::unary(a, Op::kMulC, 1.0 / b.val, a.val / b.val);
  }
  return detail::record(detail::owner(a, b), Op::kDiv, a.idx, b.idx, 0.0, a.val / b.val);
}

inline Var operator-(const Var& a) {
  if (a.is_const()) return Var(-a.val);
  return detail::unary(a, Op::kNeg, 0.0, -a.val);
}
inline Var operator+(const Var& a) { return a; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

#define FESSNC_VAR_UNARY(name, OP, fn)                            \
  inline Var name(const Var& x) {                                 \
    if (x.is_const()) return Var(fn(x.val));                      \
    return detail::unary(x, OP, 0.0, fn(x.val));                  \
  }

FESSNC_VAR_UNARY(sin, Op::kSin, std::sin)
FESSNC_VAR_UNARY(cos, Op::kCos, std::cos)
FESSNC_VAR_UNARY(exp, Op::kExp, std::exp)
FESSNC_VAR_UNARY(log, Op::kLog, std::log)
FESSNC_VAR_UNARY(tanh, Op::kTanh, std::tanh)
FESSNC_VAR_UNARY(sqrt, Op::kSqrt, std::sqrt)
#undef FESSNC_VAR_UNARY

inline Var relu(const Var& x) {
  if (x.is_const()) return Var(x.val > 0.0 ? x.val : 0.0);
  return detail::unary(x, Op::kRelu, 0.0, x.val > 0.0 ? x.val : 0.0);
}

inline Var elu(const Var& x) {
  if (x.is_const()) return Var(elu(x.val));
  return detail::unary(x, Op::kElu, 0.0, elu(x.val));
}

inline Var srelu(const Var& x, double knee) {
  if (x.is_const()) return Var(srelu(x.val, knee));
  return detail::unary(x, Op::kSrelu, knee, srelu(x.val, knee));
}
inline Var srelu_grad(const Var& x, double knee) {
  if (x.is_const()) return Var(srelu_grad(x.val, knee));
  return detail::unary(x, Op::kSreluGrad, knee, srelu_grad(x.val, knee));
}
inline Var srelu_grad2(const Var& x, double knee) {
  if (x.is_const()) return Var(srelu_grad2(x.val, knee));
  return detail::unary(x, Op::kSreluGrad2, knee, srelu_grad2(x.val, knee));
}

inline Var powc(const Var& x, double c) {
  if (x.is_const()) return Var(std::pow(x.val, c));
  return detail::unary(x, Op::kPowC, c, std::pow(x.val, c));
}
inline double powc(double x, double c) { return std::pow(x, c); }

// double overloads so unqualified calls in templated fields resolve for S = double.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;
using std::tanh;

// ---- value extraction and gradient severing ---------------------------------

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.val; }

inline double stop_gradient(double x) { return x; }
inline Var stop_gradient(const Var& x) { return Var(x.val); }

// -----------------------------------------------------------------------------
// Dual: first-order forward-mode scalar over an arbitrary scalar ring S.
// Dual2 additionally carries a second directional derivative along the same
// direction (t = d/de, s = d^2/de^2 of the evaluation path x + e*v).
// -----------------------------------------------------------------------------
template <class S>
struct Dual {
  S v{};
  S t{};
  Dual() = default;
  Dual(double x) : v(x), t(0.0) {}  // NOLINT: implicit constants
  Dual(S value, S tangent) : v(std::move(value)), t(std::move(tangent)) {}
};

template <class S>
struct Dual2 {
  S v{};
  S t{};
  S s{};
  Dual2() = default;
  Dual2(double x) : v(x), t(0.0), s(0.0) {}  // NOLINT: implicit constants
  Dual2(S value, S tangent, S second) : v(std::move(value)), t(std::move(tangent)), s(std::move(second)) {}
};

template <class S>
double value_of(const Dual<S>& d) {
  return value_of(d.v);
}
template <class S>
double value_of(const Dual2<S>& d) {
  return value_of(d.v);
}

template <class S>
Dual<S> stop_gradient(const Dual<S>& d) {
  return Dual<S>(stop_gradient(d.v), S(0.0));
}
template <class S>
Dual2<S> stop_gradient(const Dual2<S>& d) {
  return Dual2<S>(stop_gradient(d.v), S(0.0), S(0.0));
}

// ---- Dual arithmetic ---------------------------------------------------------

template <class S>
Dual<S> operator+(const Dual<S>& a, const Dual<S>& b) {
  return {a.v + b.v, a.t + b.t};
}
template <class S>
Dual<S> operator-(const Dual<S>& a, const Dual<S>& b) {
  return {a.v - b.v, a.t - b.t};
}
template <class S>
Dual<S> operator*(const Dual<S>& a, const Dual<S>& b) {
  return {a.v * b.v, a.t * b.v + a.v * b.t};
}
template <class S>
Dual<S> operator/(const Dual<S>& a, const Dual<S>& b) {
  S q = a.v / b.v;
  return {q, (a.t - q * b.t) / b.v};
}
template <class S>
Dual<S> operator-(const Dual<S>& a) {
  return {-a.v, -a.t};
}
template <class S>
Dual<S> operator+(const Dual<S>& a) {
  return a;
}

template <class S> Dual<S> operator+(const Dual<S>& a, double b) { return {a.v + b, a.t}; }
template <class S> Dual<S> operator+(double a, const Dual<S>& b) { return {a + b.v, b.t}; }
template <class S> Dual<S> operator-(const Dual<S>& a, double b) { return {a.v - b, a.t}; }
template <class S> Dual<S> operator-(double a, const Dual<S>& b) { return {a - b.v, -b.t}; }
template <class S> Dual<S> operator*(const Dual<S>& a, double b) { return {a.v * b, a.t * b}; }
template <class S> Dual<S> operator*(double a, const Dual<S>& b) { return {b.v * a, b.t * a}; }
template <class S> Dual<S> operator/(const Dual<S>& a, double b) { return {a.v / b, a.t / b}; }
template <class S> Dual<S> operator/(double a, const Dual<S>& b) { return Dual<S>(a) / b; }

template <class S> Dual<S>& operator+=(Dual<S>& a, const Dual<S>& b) { return a = a + b; }
template <class S> Dual<S>& operator-=(Dual<S>& a, const Dual<S>& b) { return a = a - b; }
template <class S> Dual<S>& operator*=(Dual<S>& a, const Dual<S>& b) { return a = a * b; }

template <class S>
Dual<S> sin(const Dual<S>& a) {
  return {sin(a.v), cos(a.v) * a.t};
}
template <class S>
Dual<S> cos(const Dual<S>& a) {
  return {cos(a.v), -(sin(a.v) * a.t)};
}
template <class S>
Dual<S> exp(const Dual<S>& a) {
  S e = exp(a.v);
  return {e, e * a.t};
}
template <class S>
Dual<S> log(const Dual<S>& a) {
  return {log(a.v), a.t / a.v};
}
template <class S>
Dual<S> tanh(const Dual<S>& a) {
  S y = tanh(a.v);
  return {y, (1.0 - y * y) * a.t};
}
template <class S>
Dual<S> sqrt(const Dual<S>& a) {
  S y = sqrt(a.v);
  return {y, a.t / (2.0 * y)};
}
template <class S>
Dual<S> relu(const Dual<S>& a) {
  double step = value_of(a.v) > 0.0 ? 1.0 : 0.0;
  return {relu(a.v), a.t * step};
}
template <class S>
Dual<S> elu(const Dual<S>& a) {
  if (value_of(a.v) > 0.0) return {a.v, a.t};
  S e = exp(a.v);
  return {e - 1.0, e * a.t};
}
template <class S>
Dual<S> srelu(const Dual<S>& a, double knee) {
  return {srelu(a.v, knee), srelu_grad(a.v, knee) * a.t};
}
template <class S>
Dual<S> powc(const Dual<S>& a, double c) {
  return {powc(a.v, c), c * powc(a.v, c - 1.0) * a.t};
}

// ---- Dual2 arithmetic --------------------------------------------------------

template <class S>
Dual2<S> operator+(const Dual2<S>& a, const Dual2<S>& b) {
  return {a.v + b.v, a.t + b.t, a.s + b.s};
}
template <class S>
Dual2<S> operator-(const Dual2<S>& a, const Dual2<S>& b) {
  return {a.v - b.v, a.t - b.t, a.s - b.s};
}
template <class S>
Dual2<S> operator*(const Dual2<S>& a, const Dual2<S>& b) {
  return {a.v * b.v, a.t * b.v + a.v * b.t, a.s * b.v + 2.0 * (a.t * b.t) + a.v * b.s};
}
template <class S>
Dual2<S> operator/(const Dual2<S>& a, const Dual2<S>& b) {
  S q = a.v / b.v;
  S qt = (a.t - q * b.t) / b.v;
  S qs = (a.s - 2.0 * (qt * b.t) - q * b.s) / b.v;
  return {q, qt, qs};
}
template <class S>
Dual2<S> operator-(const Dual2<S>& a) {
  return {-a.v, -a.t, -a.s};
}
template <class S>
Dual2<S> operator+(const Dual2<S>& a) {
  return a;
}

template <class S> Dual2<S> operator+(const Dual2<S>& a, double b) { return {a.v + b, a.t, a.s}; }
template <class S> Dual2<S> operator+(double a, const Dual2<S>& b) { return {a + b.v, b.t, b.s}; }
template <class S> Dual2<S> operator-(const Dual2<S>& a, double b) { return {a.v - b, a.t, a.s}; }
template <class S> Dual2<S> operator-(double a, const Dual2<S>& b) { return {a - b.v, -b.t, -b.s}; }
template <class S> Dual2<S> operator*(const Dual2<S>& a, double b) { return {a.v * b, a.t * b, a.s * b}; }
template <class S> Dual2<S> operator*(double a, const Dual2<S>& b) { return {b.v * a, b.t * a, b.s * a}; }
template <class S> Dual2<S> operator/(const Dual2<S>& a, double b) { return {a.v / b, a.t / b, a.s / b}; }
template <class S> Dual2<S> operator/(double a, const Dual2<S>& b) { return Dual2<S>(a) / b; }

template <class S> Dual2<S>& operator+=(Dual2<S>& a, const Dual2<S>& b) { return a = a + b; }
template <class S> Dual2<S>& operator-=(Dual2<S>& a, const Dual2<S>& b) { return a = a - b; }
template <class S> Dual2<S>& operator*=(Dual2<S>& a, const Dual2<S>& b) { return a = a * b; }

// Chain rule for y = f(u): y'' = f''(u) u'^2 + f'(u) u''.
template <class S, class F0, class F1, class F2>
Dual2<S> dual2_chain(const Dual2<S>& a, F0 f, F1 f1, F2 f2) {
  S fv = f(a.v);
  S d1 = f1(a.v);
  S d2 = f2(a.v);
  return {fv, d1 * a.t, d2 * (a.t * a.t) + d1 * a.s};
}

template <class S>
Dual2<S> sin(const Dual2<S>& a) {
  S sv = sin(a.v), cv = cos(a.v);
  return {sv, cv * a.t, -(sv * (a.t * a.t)) + cv * a.s};
}
template <class S>
Dual2<S> cos(const Dual2<S>& a) {
  S cv = cos(a.v), sv = sin(a.v);
  return {cv, -(sv * a.t), -(cv * (a.t * a.t)) - sv * a.s};
}
template <class S>
Dual2<S> exp(const Dual2<S>& a) {
  S e = exp(a.v);
  return {e, e * a.t, e * (a.t * a.t) + e * a.s};
}
template <class S>
Dual2<S> log(const Dual2<S>& a) {
  S inv = 1.0 / a.v;
  return {log(a.v), inv * a.t, -(inv * inv * (a.t * a.t)) + inv * a.s};
}
template <class S>
Dual2<S> tanh(const Dual2<S>& a) {
  S y = tanh(a.v);
  S d1 = 1.0 - y * y;
  S d2 = -2.0 * (y * d1);
  return {y, d1 * a.t, d2 * (a.t * a.t) + d1 * a.s};
}
template <class S>
Dual2<S> sqrt(const Dual2<S>& a) {
  S y = sqrt(a.v);
  S d1 = 0.5 / y;
  S d2 = -0.5 * (d1 / a.v);
  return {y, d1 * a.t, d2 * (a.t * a.t) + d1 * a.s};
}
template <class S>
Dual2<S> relu(const Dual2<S>& a) {
  double step = value_of(a.v) > 0.0 ? 1.0 : 0.0;
  return {relu(a.v), a.t * step, a.s * step};
}
template <class S>
Dual2<S> elu(const Dual2<S>& a) {
  if (value_of(a.v) > 0.0) return a;
  S e = exp(a.v);
  return {e - 1.0, e * a.t, e * (a.t * a.t) + e * a.s};
}
template <class S>
Dual2<S> srelu(const Dual2<S>& a, double knee) {
  return dual2_chain(
      a, [knee](const S& z) { return srelu(z, knee); },
      [knee](const S& z) { return srelu_grad(z, knee); },
      [knee](const S& z) { return srelu_grad2(z, knee); });
}
template <class S>
Dual2<S> powc(const Dual2<S>& a, double c) {
  S d1 = c * powc(a.v, c - 1.0);
  S d2 = c * (c - 1.0) * powc(a.v, c - 2.0);
  return {powc(a.v, c), d1 * a.t, d2 * (a.t * a.t) + d1 * a.s};
}

// -----------------------------------------------------------------------------
// Field: a scalar field over d-vectors, evaluatable with every scalar type the
// engine supports so gradients, Hessian-vector products and taped training
// losses all go through the same definition.
// -----------------------------------------------------------------------------
class Field {
 public:
  virtual ~Field() = default;
  [[nodiscard]] virtual int dim() const = 0;

  virtual double eval(std::span<const double> x) const = 0;
  virtual Dual<double> eval(std::span<const Dual<double>> x) const = 0;
  virtual Dual2<double> eval(std::span<const Dual2<double>> x) const = 0;
  virtual Var eval(std::span<const Var> x) const = 0;
  virtual Dual<Var> eval(std::span<const Dual<Var>> x) const = 0;
  virtual Dual2<Var> eval(std::span<const Dual2<Var>> x) const = 0;
};

namespace detail {
template <class Derived>
class FieldCrtp : public Field {
 public:
  double eval(std::span<const double> x) const override { return self().template evaluate<double>(x); }
  Dual<double> eval(std::span<const Dual<double>> x) const override {
    return self().template evaluate<Dual<double>>(x);
  }
  Dual2<double> eval(std::span<const Dual2<double>> x) const override {
    return self().template evaluate<Dual2<double>>(x);
  }
  Var eval(std::span<const Var> x) const override { return self().template evaluate<Var>(x); }
  Dual<Var> eval(std::span<const Dual<Var>> x) const override {
    return self().template evaluate<Dual<Var>>(x);
  }
  Dual2<Var> eval(std::span<const Dual2<Var>> x) const override {
    return self().template evaluate<Dual2<Var>>(x);
  }

 private:
  const Derived& self() const { return *static_cast<const Derived*>(this); }
};

template <class F>
class LambdaField final : public FieldCrtp<LambdaField<F>> {
 public:
  LambdaField(int dim, F f) : dim_(dim), f_(std::move(f)) {}
  [[nodiscard]] int dim() const override { return dim_; }
  template <class S>
  S evaluate(std::span<const S> x) const {
    return f_(x);
  }

 private:
  int dim_;
  F f_;
};
}  // namespace detail

// Wrap a generic callable (templated on the scalar span) as a Field.
template <class F>
std::shared_ptr<const Field> make_field(int dim, F f) {
  return std::make_shared<detail::LambdaField<F>>(dim, std::move(f));
}

// -----------------------------------------------------------------------------
// Reports and operations
// -----------------------------------------------------------------------------
struct GradientReport {
  std::vector<double> point;
  std::vector<double> gradient;
  bool has_hessian_trace = false;
  double hessian_trace = 0.0;
};

// Exact input-space gradient of `fn` at `x` (one reverse sweep).
std::vector<double> input_gradient(const Field& fn, std::span<const double> x);

// H fn(x) . v via a forward dual ride on a reverse tape.
std::vector<double> hessian_vector_product(const Field& fn, std::span<const double> x,
                                           std::span<const double> v);

// Tr[g^T H fn(x) g] as the literal sum over columns g_j of g_j . (H g_j).
// `g` is d x r, column-major-free: columns(i) spans are provided by caller.
double exact_generator_trace(const Field& fn, std::span<const double> x,
                             std::span<const double> g, int rows, int cols);

GradientReport grad_report(const Field& fn, std::span<const double> x);
// Variant that also fills the generalized Hessian trace Tr[g^T H fn g].
GradientReport grad_report(const Field& fn, std::span<const double> x, std::span<const double> g,
                           int rows, int cols);

// Gradient of a scalar loss with respect to a parameter vector. The loss body
// receives the parameters as tape variables and may internally take input
// gradients of parameterized fields (forward duals over this tape).
using ParamLoss = std::function<Var(Tape&, std::span<const Var>)>;
std::vector<double> parameter_gradient(const ParamLoss& loss, std::span<const double> theta);

// Checked finite-difference fallback (cross-validation only, never the
// training path).
std::vector<double> finite_difference_gradient(const Field& fn, std::span<const double> x,
                                               double step = 1e-5);
std::vector<double> finite_difference_parameter_gradient(
    const std::function<double(std::span<const double>)>& loss, std::span<const double> theta,
    double step = 1e-5);

}  // namespace fessnc::ad
