#include "fessnc/generator.hpp"

#include <sstream>

namespace fessnc::gen {

TraceMode TraceMode::parse(const std::string& text) {
  if (text == "exact") return exact();
  if (text == "vector") return vector_identity();
  if (text.rfind("hutchinson:", 0) == 0) {
    const std::string rest = text.substr(11);
    const auto colon = rest.find(':');
    if (colon != std::string::npos) {
      const int m = std::stoi(rest.substr(0, colon));
      const std::string noise = rest.substr(colon + 1);
      if (m < 1) throw std::invalid_argument("trace mode: Hutchinson sample count must be >= 1");
      if (noise == "rademacher") return hutchinson(m, NoiseKind::kRademacher);
      if (noise == "gaussian") return hutchinson(m, NoiseKind::kGaussian);
    }
  }
  throw std::invalid_argument(
      "unknown trace mode '" + text +
      "' (valid: exact | hutchinson:M:rademacher | hutchinson:M:gaussian | vector)");
}

std::string TraceMode::str() const {
  switch (kind) {
    case TraceKind::kExact:
      return "exact";
    case TraceKind::kVectorIdentity:
      return "vector";
    case TraceKind::kHutchinson: {
      std::ostringstream ss;
      ss << "hutchinson:" << samples << ":"
         << (noise == NoiseKind::kRademacher ? "rademacher" : "gaussian");
      return ss.str();
    }
  }
  return "exact";
}

TraceMode training_trace_mode(int r) {
  return r == 1 ? TraceMode::vector_identity() : TraceMode::hutchinson(1, NoiseKind::kRademacher);
}

TraceMode projection_trace_mode(int r) {
  return r == 1 ? TraceMode::vector_identity() : TraceMode::exact();
}

double hutchinson_trace(const ad::Field& field, std::span<const double> x,
                        const Eigen::MatrixXd& g, int samples, NoiseKind noise, Rng& rng) {
  if (samples < 1) throw std::invalid_argument("hutchinson_trace: M must be >= 1");
  if (g.rows() != field.dim()) throw std::invalid_argument("hutchinson_trace: g row count mismatch");
  const std::size_t d = x.size();
  std::vector<double> xi(d);
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      xi[i] = noise == NoiseKind::kRademacher ? rademacher(rng) : gaussian(rng);
    }
    const std::vector<double> hv = ad::hessian_vector_product(field, x, xi);
    Eigen::Map<const Eigen::VectorXd> xim(xi.data(), static_cast<int>(d));
    Eigen::Map<const Eigen::VectorXd> hvm(hv.data(), static_cast<int>(d));
    acc += hvm.dot(g * (g.transpose() * xim));
  }
  return acc / static_cast<double>(samples);
}

double vector_identity_trace(const ad::Field& field, std::span<const double> x,
                             std::span<const double> g) {
  if (static_cast<int>(x.size()) != field.dim() || g.size() != x.size()) {
    throw std::invalid_argument("vector_identity_trace: g must be a d-vector");
  }
  ad::ScopedTape scoped;
  ad::Tape& tape = *scoped;
  std::vector<ad::Var> xs(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xs[i] = tape.leaf(x[i]);
  // The tangent direction enters as constants: the detached copy of g.
  std::vector<ad::Dual<ad::Var>> xd(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xd[i] = ad::Dual<ad::Var>(xs[i], ad::Var(g[i]));
  ad::Dual<ad::Var> y = field.eval(std::span<const ad::Dual<ad::Var>>(xd));
  if (y.t.is_const()) return 0.0;
  tape.backward(y.t);
  double out = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) out += g[i] * tape.adjoint(xs[i]);
  return out;
}

GeneratorEval evaluate_generator(const dyn::SdeModel& model, const StateMap& u,
                                 const ad::Field& field, std::span<const double> x,
                                 const TraceMode& mode, Rng* rng) {
  if (field.dim() != model.d || static_cast<int>(x.size()) != model.d) {
    throw std::invalid_argument("evaluate_generator: dimension mismatch");
  }
  GeneratorEval out;
  out.drift.resize(static_cast<std::size_t>(model.d));
  model.drift(x, out.drift);
  out.control.resize(static_cast<std::size_t>(model.d));
  u(x, out.control);

  const Eigen::MatrixXd g = model.diffusion_at(x);
  if (mode.kind == TraceKind::kVectorIdentity) {
    if (model.r != 1) {
      throw std::invalid_argument("vector-identity trace requires a vector diffusion (r == 1)");
    }
    // One forward pass with the tangent seeded along g, then two reverse
    // sweeps: one for grad(field), one for H field . g.
    ad::ScopedTape scoped;
    ad::Tape& tape = *scoped;
    std::vector<ad::Var> xs(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xs[i] = tape.leaf(x[i]);
    std::vector<ad::Dual<ad::Var>> xd(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xd[i] = ad::Dual<ad::Var>(xs[i], ad::Var(g(static_cast<int>(i), 0)));
    ad::Dual<ad::Var> y = field.eval(std::span<const ad::Dual<ad::Var>>(xd));
    out.field_value = ad::value_of(y.v);
    out.grad.assign(x.size(), 0.0);
    if (!y.v.is_const()) {
      tape.backward(y.v);
      for (std::size_t i = 0; i < x.size(); ++i) out.grad[i] = tape.adjoint(xs[i]);
    }
    out.trace_term = 0.0;
    if (!y.t.is_const()) {
      tape.backward(y.t);
      for (std::size_t i = 0; i < x.size(); ++i) out.trace_term += g(static_cast<int>(i), 0) * tape.adjoint(xs[i]);
    }
  } else {
    out.field_value = field.eval(x);
    out.grad = ad::input_gradient(field, x);
    switch (mode.kind) {
      case TraceKind::kExact: {
        std::vector<double> flat(static_cast<std::size_t>(g.size()));
        for (int i = 0; i < g.rows(); ++i) {
          for (int j = 0; j < g.cols(); ++j) flat[static_cast<std::size_t>(i * g.cols() + j)] = g(i, j);
        }
        out.trace_term = ad::exact_generator_trace(field, x, flat, static_cast<int>(g.rows()),
                                                   static_cast<int>(g.cols()));
        break;
      }
      case TraceKind::kHutchinson: {
        if (mode.samples < 1) throw std::invalid_argument("Hutchinson trace requires M >= 1");
        if (rng == nullptr) throw std::invalid_argument("Hutchinson trace requires an rng");
        out.trace_term = hutchinson_trace(field, x, g, mode.samples, mode.noise, *rng);
        break;
      }
      default:
        break;
    }
  }
  out.lie = out.lie_at(out.control);
  return out;
}

double apply_generator(const dyn::SdeModel& model, const StateMap& u, const ad::Field& field,
                       std::span<const double> x, const TraceMode& mode, Rng* rng) {
  return evaluate_generator(model, u, field, x, mode, rng).lie;
}

}  // namespace fessnc::gen
