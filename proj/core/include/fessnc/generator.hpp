#pragma once

// The stochastic derivative operator L_u applied to scalar fields:
// L_u V(x) = grad V . (f + u) + 1/2 Tr[g^T (H V) g], with the trace term
// computed exactly, by Hutchinson estimation, or by the r = 1 identity.

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fessnc/autodiff.hpp"
#include "fessnc/dynamics.hpp"
#include "fessnc/rng.hpp"

namespace fessnc::gen {

// Control evaluated at a fixed time: x -> u(x).
using StateMap = std::function<void(std::span<const double>, std::span<double>)>;

inline StateMap zero_control() {
  return [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
}

enum class TraceKind : std::uint8_t { kExact, kHutchinson, kVectorIdentity };
enum class NoiseKind : std::uint8_t { kRademacher, kGaussian };

struct TraceMode {
  TraceKind kind = TraceKind::kExact;
  int samples = 1;                           // Hutchinson only
  NoiseKind noise = NoiseKind::kRademacher;  // Hutchinson only

  static TraceMode exact() { return {TraceKind::kExact, 1, NoiseKind::kRademacher}; }
  static TraceMode vector_identity() { return {TraceKind::kVectorIdentity, 1, NoiseKind::kRademacher}; }
  static TraceMode hutchinson(int m, NoiseKind n) { return {TraceKind::kHutchinson, m, n}; }

  // "exact" | "hutchinson:M:rademacher" | "hutchinson:M:gaussian" | "vector"
  static TraceMode parse(const std::string& text);
  [[nodiscard]] std::string str() const;
};

// Backend selection rule: training favours the cheap estimators, projection
// and evaluation the exact-class backends.
TraceMode training_trace_mode(int r);
TraceMode projection_trace_mode(int r);

// (1/M) sum_i (grad(xi^T grad V))^T g g^T xi  -- unbiased for Tr[g^T H V g].
double hutchinson_trace(const ad::Field& field, std::span<const double> x,
                        const Eigen::MatrixXd& g, int samples, NoiseKind noise, Rng& rng);

// g^T grad((stop_gradient(g))^T grad V) for a d-vector g; an identity, not an
// estimate.
double vector_identity_trace(const ad::Field& field, std::span<const double> x,
                             std::span<const double> g);

struct GeneratorEval {
  double field_value = 0.0;
  std::vector<double> grad;
  std::vector<double> drift;    // f(x)
  std::vector<double> control;  // u(x)
  double trace_term = 0.0;      // Tr[g^T H field g]
  double lie = 0.0;             // grad . (f + u) + trace_term / 2

  // The generator is affine in the control: re-evaluate at a corrected
  // control value without recomputing grad or trace.
  [[nodiscard]] double lie_at(std::span<const double> u_value) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) acc += grad[i] * (drift[i] + u_value[i]);
    return acc + 0.5 * trace_term;
  }
};

GeneratorEval evaluate_generator(const dyn::SdeModel& model, const StateMap& u,
                                 const ad::Field& field, std::span<const double> x,
                                 const TraceMode& mode, Rng* rng = nullptr);

double apply_generator(const dyn::SdeModel& model, const StateMap& u, const ad::Field& field,
                       std::span<const double> x, const TraceMode& mode, Rng* rng = nullptr);

// -----------------------------------------------------------------------------
// Scalar-generic evaluation used by the training losses: x, f(x), g(x) are
// plain numbers (samples are constants), the control value and the field
// parameters may be tape variables. All trace backends reduce to directional
// second derivatives of the field.
// -----------------------------------------------------------------------------
template <class S>
struct GeneratorTerms {
  S lie;
  S field_value;
};

template <class S>
S directional_second(const ad::Field& field, std::span<const double> x,
                     std::span<const double> dir) {
  std::vector<ad::Dual2<S>> xd(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xd[i] = ad::Dual2<S>(S(x[i]), S(dir[i]), S(0.0));
  }
  return field.eval(std::span<const ad::Dual2<S>>(xd)).s;
}

template <class S>
GeneratorTerms<S> generator_point(const ad::Field& field, std::span<const double> x,
                                  std::span<const double> f_x, std::span<const S> u_x,
                                  const Eigen::MatrixXd& g_x, const TraceMode& mode, Rng* rng) {
  const std::size_t d = x.size();
  // Drift term: directional derivative of the field along f + u, with the
  // tangent carrying the (possibly taped) control value.
  std::vector<ad::Dual<S>> xd(d);
  for (std::size_t i = 0; i < d; ++i) {
    xd[i] = ad::Dual<S>(S(x[i]), f_x[i] + u_x[i]);
  }
  ad::Dual<S> head = field.eval(std::span<const ad::Dual<S>>(xd));

  S trace = S(0.0);
  std::vector<double> dir(d);
  switch (mode.kind) {
    case TraceKind::kVectorIdentity: {
      if (g_x.cols() != 1) throw std::invalid_argument("vector-identity trace requires r == 1");
      for (std::size_t i = 0; i < d; ++i) dir[i] = g_x(static_cast<int>(i), 0);
      trace = directional_second<S>(field, x, dir);
      break;
    }
    case TraceKind::kExact: {
      for (int j = 0; j < g_x.cols(); ++j) {
        for (std::size_t i = 0; i < d; ++i) dir[i] = g_x(static_cast<int>(i), j);
        trace = trace + directional_second<S>(field, x, dir);
      }
      break;
    }
    case TraceKind::kHutchinson: {
      if (mode.samples < 1) throw std::invalid_argument("Hutchinson trace requires M >= 1");
      if (rng == nullptr) throw std::invalid_argument("Hutchinson trace requires an rng");
      std::vector<double> xi(d), b(d), plus(d), minus(d);
      S acc = S(0.0);
      for (int s = 0; s < mode.samples; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
          xi[i] = mode.noise == NoiseKind::kRademacher ? rademacher(*rng) : gaussian(*rng);
        }
        Eigen::Map<const Eigen::VectorXd> xim(xi.data(), static_cast<int>(d));
        Eigen::VectorXd bm = g_x * (g_x.transpose() * xim);
        for (std::size_t i = 0; i < d; ++i) {
          b[i] = bm(static_cast<int>(i));
          plus[i] = xi[i] + b[i];
          minus[i] = xi[i] - b[i];
        }
        // xi^T H b by polarization of same-direction second derivatives.
        acc = acc + 0.25 * (directional_second<S>(field, x, plus) -
                            directional_second<S>(field, x, minus));
      }
      trace = acc / static_cast<double>(mode.samples);
      break;
    }
  }
  return {head.t + 0.5 * trace, head.v};
}

}  // namespace fessnc::gen
