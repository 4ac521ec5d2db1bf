#include "fessnc/autodiff.hpp"

#include <algorithm>

namespace fessnc::ad {

double srelu(double z, double knee) {
  if (z <= 0.0) return 0.0;
  if (z >= knee) return z - 0.5 * knee;
  const double s = z / knee;
  return knee * s * s * s * (1.0 - 0.5 * s);
}

double srelu_grad(double z, double knee) {
  if (z <= 0.0) return 0.0;
  if (z >= knee) return 1.0;
  const double s = z / knee;
  return s * s * (3.0 - 2.0 * s);
}

double srelu_grad2(double z, double knee) {
  if (z <= 0.0 || z >= knee) return 0.0;
  const double s = z / knee;
  return 6.0 * s * (1.0 - s) / knee;
}

double srelu_grad3(double z, double knee) {
  if (z <= 0.0 || z >= knee) return 0.0;
  return (6.0 - 12.0 * z / knee) / (knee * knee);
}

double elu(double z) { return z > 0.0 ? z : std::exp(z) - 1.0; }

namespace {
thread_local std::vector<std::unique_ptr<Tape>> tape_free_list;
}  // namespace

ScopedTape::ScopedTape() {
  if (tape_free_list.empty()) {
    tape_ = new Tape();
  } else {
    tape_ = tape_free_list.back().release();
    tape_free_list.pop_back();
    tape_->clear();
  }
}

ScopedTape::~ScopedTape() { tape_free_list.emplace_back(tape_); }

void Tape::backward(const Var& output) {
  if (output.tape != this || output.idx < 0) {
    throw std::invalid_argument("Tape::backward: output does not live on this tape");
  }
  adj_.assign(nodes_.size(), 0.0);
  adj_[static_cast<std::size_t>(output.idx)] = 1.0;
  for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
    const double w = adj_[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    auto acc = [&](std::int32_t j, double v) { adj_[static_cast<std::size_t>(j)] += v; };
    const double av = n.a >= 0 ? nodes_[static_cast<std::size_t>(n.a)].val : 0.0;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        acc(n.a, w);
        acc(n.b, w);
        break;
      case Op::kSub:
        acc(n.a, w);
        acc(n.b, -w);
        break;
      case Op::kMul:
        acc(n.a, w * nodes_[static_cast<std::size_t>(n.b)].val);
        acc(n.b, w * av);
        break;
      case Op::kDiv: {
        const double bv = nodes_[static_cast<std::size_t>(n.b)].val;
        acc(n.a, w / bv);
        acc(n.b, -w * n.val / bv);
        break;
      }
      case Op::kAddC:
        acc(n.a, w);
        break;
      case Op::kMulC:
        acc(n.a, w * n.c);
        break;
      case Op::kCSub:
        acc(n.a, -w);
        break;
      case Op::kCDiv:
        acc(n.a, -w * n.val / av);
        break;
      case Op::kNeg:
        acc(n.a, -w);
        break;
      case Op::kSin:
        acc(n.a, w * std::cos(av));
        break;
      case Op::kCos:
        acc(n.a, -w * std::sin(av));
        break;
      case Op::kExp:
        acc(n.a, w * n.val);
        break;
      case Op::kLog:
        acc(n.a, w / av);
        break;
      case Op::kTanh:
        acc(n.a, w * (1.0 - n.val * n.val));
        break;
      case Op::kSqrt:
        acc(n.a, w * 0.5 / n.val);
        break;
      case Op::kRelu:
        if (av > 0.0) acc(n.a, w);
        break;
      case Op::kElu:
        acc(n.a, av > 0.0 ? w : w * (n.val + 1.0));
        break;
      case Op::kSrelu:
        acc(n.a, w * srelu_grad(av, n.c));
        break;
      case Op::kSreluGrad:
        acc(n.a, w * srelu_grad2(av, n.c));
        break;
      case Op::kSreluGrad2:
        acc(n.a, w * srelu_grad3(av, n.c));
        break;
      case Op::kPowC:
        acc(n.a, w * n.c * std::pow(av, n.c - 1.0));
        break;
    }
  }
}

double Tape::adjoint(const Var& v) const {
  if (v.tape != this || v.idx < 0) return 0.0;
  return adj_[static_cast<std::size_t>(v.idx)];
}

std::vector<double> Tape::gradient(const Var& output, std::span<const Var> wrt) {
  backward(output);
  std::vector<double> g(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) g[i] = adjoint(wrt[i]);
  return g;
}

std::vector<double> input_gradient(const Field& fn, std::span<const double> x) {
  if (static_cast<int>(x.size()) != fn.dim()) {
    throw std::invalid_argument("input_gradient: point dimension " + std::to_string(x.size()) +
                                " does not match field arity " + std::to_string(fn.dim()));
  }
  ScopedTape scoped;
  Tape& tape = *scoped;
  std::vector<Var> xs(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xs[i] = tape.leaf(x[i]);
  Var y = fn.eval(std::span<const Var>(xs));
  if (y.is_const()) return std::vector<double>(x.size(), 0.0);
  return tape.gradient(y, xs);
}

std::vector<double> hessian_vector_product(const Field& fn, std::span<const double> x,
                                           std::span<const double> v) {
  if (static_cast<int>(x.size()) != fn.dim() || v.size() != x.size()) {
    throw std::invalid_argument("hessian_vector_product: dimension mismatch");
  }
  ScopedTape scoped;
  Tape& tape = *scoped;
  std::vector<Var> xs(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xs[i] = tape.leaf(x[i]);
  std::vector<Dual<Var>> xd(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xd[i] = Dual<Var>(xs[i], Var(v[i]));
  Dual<Var> y = fn.eval(std::span<const Dual<Var>>(xd));
  // y.t = grad fn . v as a tape scalar; one reverse sweep gives H fn . v.
  if (y.t.is_const()) return std::vector<double>(x.size(), 0.0);
  return tape.gradient(y.t, xs);
}

double exact_generator_trace(const Field& fn, std::span<const double> x,
                             std::span<const double> g, int rows, int cols) {
  if (rows != fn.dim() || static_cast<int>(x.size()) != rows ||
      static_cast<int>(g.size()) != rows * cols) {
    throw std::invalid_argument("exact_generator_trace: shape mismatch");
  }
  double tr = 0.0;
  std::vector<double> col(static_cast<std::size_t>(rows));
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) col[static_cast<std::size_t>(i)] = g[static_cast<std::size_t>(i * cols + j)];
    std::vector<double> hv = hessian_vector_product(fn, x, col);
    double dot = 0.0;
    for (int i = 0; i < rows; ++i) dot += col[static_cast<std::size_t>(i)] * hv[static_cast<std::size_t>(i)];
    tr += dot;
  }
  return tr;
}

GradientReport grad_report(const Field& fn, std::span<const double> x) {
  GradientReport rep;
  rep.point.assign(x.begin(), x.end());
  rep.gradient = input_gradient(fn, x);
  return rep;
}

GradientReport grad_report(const Field& fn, std::span<const double> x, std::span<const double> g,
                           int rows, int cols) {
  GradientReport rep = grad_report(fn, x);
  rep.hessian_trace = exact_generator_trace(fn, x, g, rows, cols);
  rep.has_hessian_trace = true;
  return rep;
}

std::vector<double> parameter_gradient(const ParamLoss& loss, std::span<const double> theta) {
  Tape tape;
  std::vector<Var> th(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) th[i] = tape.leaf(theta[i]);
  Var y;
  try {
    y = loss(tape, std::span<const Var>(th));
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("parameter_gradient: loss evaluation failed: ") + e.what());
  }
  if (y.is_const()) return std::vector<double>(theta.size(), 0.0);
  return tape.gradient(y, th);
}

std::vector<double> finite_difference_gradient(const Field& fn, std::span<const double> x,
                                               double step) {
  std::vector<double> pt(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = pt[i];
    pt[i] = saved + step;
    const double up = fn.eval(std::span<const double>(pt));
    pt[i] = saved - step;
    const double dn = fn.eval(std::span<const double>(pt));
    pt[i] = saved;
    g[i] = (up - dn) / (2.0 * step);
  }
  return g;
}

std::vector<double> finite_difference_parameter_gradient(
    const std::function<double(std::span<const double>)>& loss, std::span<const double> theta,
    double step) {
  std::vector<double> pt(theta.begin(), theta.end());
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = pt[i];
    const double h = step * std::max(1.0, std::abs(saved));
    pt[i] = saved + h;
    const double up = loss(std::span<const double>(pt));
    pt[i] = saved - h;
    const double dn = loss(std::span<const double>(pt));
    pt[i] = saved;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace fessnc::ad
