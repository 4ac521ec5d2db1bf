#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "fessnc/autodiff.hpp"
#include "fessnc/rng.hpp"

namespace testutil {

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double max_rel_err(std::span<const double> got, std::span<const double> want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, rel_err(got[i], want[i]));
  return worst;
}

inline std::vector<double> random_point(fessnc::Rng& rng, int d, double lo = -2.0, double hi = 2.0) {
  std::vector<double> x(static_cast<std::size_t>(d));
  for (auto& xi : x) xi = fessnc::uniform(rng, lo, hi);
  return x;
}

// Central finite differences of a Field's value (first derivative oracle).
inline std::vector<double> fd_gradient(const fessnc::ad::Field& f, std::span<const double> x,
                                       double step = 1e-5) {
  std::vector<double> pt(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = pt[i];
    pt[i] = saved + step;
    const double up = f.eval(std::span<const double>(pt));
    pt[i] = saved - step;
    const double dn = f.eval(std::span<const double>(pt));
    pt[i] = saved;
    g[i] = (up - dn) / (2.0 * step);
  }
  return g;
}

// Finite differences of the exact input gradient along v (HVP oracle).
inline std::vector<double> fd_hvp(const fessnc::ad::Field& f, std::span<const double> x,
                                  std::span<const double> v, double step = 1e-5) {
  std::vector<double> plus(x.begin(), x.end()), minus(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus[i] += step * v[i];
    minus[i] -= step * v[i];
  }
  const auto gp = fessnc::ad::input_gradient(f, plus);
  const auto gm = fessnc::ad::input_gradient(f, minus);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * step);
  return out;
}

}  // namespace testutil
