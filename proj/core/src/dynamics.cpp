#include "fessnc/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fessnc::dyn {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::function<std::vector<double>(Rng&)> box_sampler(Box box) {
  return [box = std::move(box)](Rng& rng) { return box.sample(rng); };
}

}  // namespace

// ---- GBM (Example 1) -----------------------------------------------------------

SdeModel make_gbm(double a, double b) {
  SdeModel m;
  m.d = 1;
  m.r = 1;
  m.name = "gbm";
  m.drift = [a](std::span<const double> x, std::span<double> f) { f[0] = a * x[0]; };
  m.diffusion = [b](std::span<const double> x, Eigen::MatrixXd& g) { g(0, 0) = b * x[0]; };
  m.state_space_hint = Box{{-2.0}, {2.0}};
  return m;
}

// ---- double pendulum (shifted coordinates, state (th1, z1, th2, z2)) -------------

SystemBundle make_double_pendulum() {
  const double m1 = 1.0, m2 = 1.0, l1 = 1.0, l2 = 1.0, grav = 9.81;

  SdeModel m;
  m.d = 4;
  m.r = 1;
  m.name = "double_pendulum";
  m.drift = [=](std::span<const double> x, std::span<double> f) {
    // Shifted angles: original theta_i = x_i + pi, so sin(theta_i) = -sin(x_i)
    // while angle differences are unchanged.
    const double th1 = x[0], z1 = x[1], th2 = x[2], z2 = x[3];
    const double s1 = -std::sin(th1), s2 = -std::sin(th2);
    const double sd = std::sin(th1 - th2), cd = std::cos(th1 - th2);
    const double denom = m1 + m2 * sd * sd;
    f[0] = z1;
    f[1] = (m2 * grav * s2 * cd - m2 * sd * (l1 * z1 * z1 * cd + l2 * z2 * z2) -
            (m1 + m2) * grav * s1) /
           (l1 * denom);
    f[2] = z2;
    f[3] = ((m1 + m2) * (l1 * z1 * z1 * sd - grav * s2 + grav * s1 * cd) +
            m2 * l2 * z2 * z2 * sd * cd) /
           (l2 * denom);
  };
  m.diffusion = [](std::span<const double> x, Eigen::MatrixXd& g) {
    g.setZero();
    g(1, 0) = std::sin(x[0]);
    g(3, 0) = std::sin(x[2]);
  };

  Box sample_box{{-kPi / 6.0 - kPi, -5.0, -5.0, -5.0}, {7.0 * kPi / 6.0 - kPi, 5.0, 5.0, 5.0}};
  m.state_space_hint = sample_box;

  SafeRegionSpec safe;
  safe.barrier = ad::make_field(4, [](auto xs) { return 0.5 - sin(xs[0]); });
  safe.smooth_barrier = safe.barrier;
  safe.sample_box = sample_box;
  safe.sampler = box_sampler(sample_box);
  safe.description = "inner link angle restricted: sin(theta1) <= 1/2 (shifted)";

  SystemBundle bundle;
  bundle.model = std::move(m);
  bundle.safe = std::move(safe);
  bundle.x0_box = Box{{-0.5, -0.5, -0.5, -0.5}, {0.5, 0.5, 0.5, 0.5}};
  bundle.success = SuccessSpec{SuccessSpec::Kind::kAnglesUpright, {0, 2}, kPi / 40.0, 3.0};
  return bundle;
}

// ---- planar kinematic bicycle, state (x, y, theta, v) ----------------------------

SystemBundle make_bicycle() {
  SdeModel m;
  m.d = 4;
  m.r = 1;
  m.name = "bicycle";
  m.drift = [](std::span<const double> x, std::span<double> f) {
    f[0] = x[3] * std::cos(x[2]);
    f[1] = x[3] * std::sin(x[2]);
    f[2] = x[3];
    f[3] = x[0] * x[0] + x[1] * x[1];
  };
  m.diffusion = [](std::span<const double> x, Eigen::MatrixXd& g) {
    g.setZero();
    g(0, 0) = x[0];
    g(1, 0) = x[1];
  };
  m.state_space_hint = Box{{-3.0, -3.0, -3.0, -3.0}, {3.0, 3.0, 3.0, 3.0}};

  SafeRegionSpec safe;
  safe.barrier = ad::make_field(4, [](auto xs) { return 4.0 - (xs[0] * xs[0] + xs[1] * xs[1]); });
  safe.smooth_barrier = safe.barrier;
  safe.sample_box = m.state_space_hint;
  // Polar sampling (r cos w, r sin w, theta, v), (r, w, theta, v) in
  // [0,3] x [0,2pi] x [-3,3]^2.
  safe.sampler = [](Rng& rng) {
    const double r = uniform(rng, 0.0, 3.0);
    const double w = uniform(rng, 0.0, 2.0 * kPi);
    return std::vector<double>{r * std::cos(w), r * std::sin(w), uniform(rng, -3.0, 3.0),
                               uniform(rng, -3.0, 3.0)};
  };
  safe.description = "round wall of radius 2: x^2 + y^2 <= 4";

  SystemBundle bundle;
  bundle.model = std::move(m);
  bundle.safe = std::move(safe);
  // Default rollout starts sit well inside the wall; the multiplicative
  // position noise can still swing the radius by ~1.5 before settling.
  bundle.x0_box = Box{{-0.3, -0.3, -0.3, -0.3}, {0.3, 0.3, 0.3, 0.3}};
  bundle.success = SuccessSpec{SuccessSpec::Kind::kTargetDistance, {0, 1}, 0.1, 2.0};
  return bundle;
}

// ---- coupled FitzHugh-Nagumo variance network ------------------------------------

Eigen::MatrixXd watts_strogatz_laplacian(int n, int ring_degree, double rewire_prob,
                                         std::uint64_t seed) {
  if (n < 2 || ring_degree < 2 || ring_degree % 2 != 0 || ring_degree > 2 * (n - 1)) {
    throw std::invalid_argument("watts_strogatz_laplacian: invalid topology parameters");
  }
  if (rewire_prob < 0.0 || rewire_prob > 1.0) {
    throw std::invalid_argument("watts_strogatz_laplacian: rewire probability outside [0, 1]");
  }
  Rng rng(splitmix64(seed));
  std::set<std::pair<int, int>> edges;
  auto key = [](int a, int b) { return std::make_pair(std::min(a, b), std::max(a, b)); };
  for (int i = 0; i < n; ++i) {
    for (int k = 1; k <= ring_degree / 2; ++k) edges.insert(key(i, (i + k) % n));
  }
  // Rewire each clockwise ring edge with probability p.
  for (int i = 0; i < n; ++i) {
    for (int k = 1; k <= ring_degree / 2; ++k) {
      const int j = (i + k) % n;
      if (uniform(rng, 0.0, 1.0) >= rewire_prob) continue;
      auto old_edge = key(i, j);
      if (!edges.count(old_edge)) continue;
      int target = -1;
      for (int attempt = 0; attempt < 10 * n; ++attempt) {
        const int cand = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
        if (cand != i && !edges.count(key(i, cand))) {
          target = cand;
          break;
        }
      }
      if (target < 0) continue;  // saturated node, keep the ring edge
      edges.erase(old_edge);
      edges.insert(key(i, target));
    }
  }
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [a, b] : edges) {
    lap(a, b) -= 1.0;
    lap(b, a) -= 1.0;
    lap(a, a) += 1.0;
    lap(b, b) += 1.0;
  }
  return lap;
}

SystemBundle make_fhn_variance_network(const FhnTopology& topo) {
  if (topo.n < 2) throw std::invalid_argument("make_fhn_variance_network: need n >= 2");
  const int n = topo.n;
  const int d = 2 * n;
  Eigen::MatrixXd lap = watts_strogatz_laplacian(n, topo.ring_degree, topo.rewire_prob, topo.seed);

  // Single-oscillator Jacobian of (v - v^3/3 - w + 1, 0.1(v + 0.7 - 0.8 w)) at the origin.
  const double j00 = 1.0, j01 = -1.0, j10 = 0.1, j11 = -0.08;

  SdeModel m;
  m.d = d;
  m.r = 1;
  m.name = "fhn";
  m.drift = [n, j00, j01, j10, j11](std::span<const double> x, std::span<double> f) {
    for (int i = 0; i < n; ++i) {
      const double v = x[static_cast<std::size_t>(2 * i)];
      const double w = x[static_cast<std::size_t>(2 * i + 1)];
      f[static_cast<std::size_t>(2 * i)] = j00 * v + j01 * w;
      f[static_cast<std::size_t>(2 * i + 1)] = j10 * v + j11 * w;
    }
  };
  m.diffusion = [n, lap](std::span<const double> x, Eigen::MatrixXd& g) {
    g.setZero();
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) {
        const double lij = lap(i, j);
        if (lij != 0.0) acc += lij * x[static_cast<std::size_t>(2 * j)];
      }
      g(2 * i, 0) = acc / 3.0;
    }
  };

  Box sample_box;
  sample_box.lo.assign(static_cast<std::size_t>(d), -5.0);
  sample_box.hi.assign(static_cast<std::size_t>(d), 5.0);
  m.state_space_hint = sample_box;

  SafeRegionSpec safe;
  safe.barrier = ad::make_field(d, [](auto xs) {
    using S = std::remove_cvref_t<decltype(xs[0])>;
    double best = 0.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double vi = ad::value_of(xs[i]);
      if (vi * vi > best) {
        best = vi * vi;
        arg = i;
      }
    }
    S top = xs[arg] * xs[arg];
    return 25.0 - top;
  });
  // log-sum-exp softened max of the squared components; shifted for overflow.
  safe.smooth_barrier = ad::make_field(d, [](auto xs) {
    constexpr double kSharpness = 20.0;
    using S = std::remove_cvref_t<decltype(xs[0])>;
    double shift = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double vi = ad::value_of(xs[i]);
      shift = std::max(shift, vi * vi);
    }
    S acc = S(0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      acc = acc + exp(kSharpness * (xs[i] * xs[i] - shift));
    }
    return 25.0 - (shift + log(acc) / kSharpness);
  });
  safe.sample_box = sample_box;
  safe.sampler = box_sampler(sample_box);
  safe.description = "variance components bounded: max_i(v_i^2, w_i^2) <= 25";

  SystemBundle bundle;
  bundle.model = std::move(m);
  bundle.safe = std::move(safe);
  Box x0;
  x0.lo.assign(static_cast<std::size_t>(d), -1.0);
  x0.hi.assign(static_cast<std::size_t>(d), 1.0);
  bundle.x0_box = std::move(x0);
  SuccessSpec success;
  success.kind = SuccessSpec::Kind::kSupNormBelow;
  for (int i = 0; i < n; ++i) success.indices.push_back(2 * i);  // membrane-potential rows
  success.threshold = 0.1;
  bundle.success = success;
  bundle.topology = topo;
  return bundle;
}

// ---- 3-link planar pendulum (shifted), state (th1, th2, th3, y1, y2, y3) ---------

namespace {

// Unit masses, lengths, inertias and centers of gravity.
struct ThreeLinkTables {
  double a[3][3];
  double b[3];
  ThreeLinkTables() {
    const double mass[3] = {1.0, 1.0, 1.0};
    const double len[3] = {1.0, 1.0, 1.0};
    const double lc[3] = {1.0, 1.0, 1.0};
    const double inertia[3] = {1.0, 1.0, 1.0};
    for (int i = 0; i < 3; ++i) {
      double tail = 0.0;
      for (int k = i + 1; k < 3; ++k) tail += mass[k];
      a[i][i] = inertia[i] + mass[i] * lc[i] * lc[i] + len[i] * len[i] * tail;
      b[i] = mass[i] * lc[i] + len[i] * tail;
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) {
        double tail = 0.0;
        for (int k = j + 1; k < 3; ++k) tail += mass[k];
        a[i][j] = a[j][i] = mass[j] * len[i] * lc[j] + len[i] * len[j] * tail;
      }
    }
  }
};

const ThreeLinkTables& three_link_tables() {
  static const ThreeLinkTables tables;
  return tables;
}

}  // namespace

Eigen::Matrix3d three_link_mass_matrix(std::span<const double> th) {
  const auto& tab = three_link_tables();
  Eigen::Matrix3d mass;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) mass(i, j) = tab.a[i][j] * std::cos(th[static_cast<std::size_t>(j)] - th[static_cast<std::size_t>(i)]);
  }
  return mass;
}

SystemBundle make_three_link() {
  SdeModel m;
  m.d = 6;
  m.r = 1;
  m.name = "three_link";
  m.drift = [](std::span<const double> x, std::span<double> f) {
    const auto& tab = three_link_tables();
    const std::span<const double> th = x.subspan(0, 3);
    const std::span<const double> y = x.subspan(3, 3);
    Eigen::Matrix3d mass = three_link_mass_matrix(th);
    Eigen::Vector3d rhs;
    for (int i = 0; i < 3; ++i) {
      double ny = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double nij = -tab.a[i][j] * y[static_cast<std::size_t>(j)] *
                           std::sin(th[static_cast<std::size_t>(j)] - th[static_cast<std::size_t>(i)]);
        ny += nij * y[static_cast<std::size_t>(j)];
      }
      // Shifted gravity torque: Q_i = b_i sin(th_i) after theta -> theta + pi.
      const double q = tab.b[i] * std::sin(th[static_cast<std::size_t>(i)]);
      rhs(i) = -ny - q;
    }
    Eigen::LLT<Eigen::Matrix3d> llt(mass);
    if (llt.info() != Eigen::Success) {
      std::ostringstream ss;
      ss << "three_link: mass matrix not positive definite at state (";
      for (std::size_t i = 0; i < x.size(); ++i) ss << (i ? ", " : "") << x[i];
      ss << ")";
      throw std::runtime_error(ss.str());
    }
    Eigen::Vector3d acc = llt.solve(rhs);
    f[0] = y[0];
    f[1] = y[1];
    f[2] = y[2];
    f[3] = acc(0);
    f[4] = acc(1);
    f[5] = acc(2);
  };
  m.diffusion = [](std::span<const double> x, Eigen::MatrixXd& g) {
    g.setZero();
    g(3, 0) = std::sin(x[0]);
    g(4, 0) = std::sin(x[1]);
    g(5, 0) = std::sin(x[2]);
  };

  Box sample_box{{-kPi / 6.0 - kPi, -5.0, -5.0, -5.0, -5.0, -5.0},
                 {7.0 * kPi / 6.0 - kPi, 5.0, 5.0, 5.0, 5.0, 5.0}};
  m.state_space_hint = sample_box;

  SafeRegionSpec safe;
  safe.barrier = ad::make_field(6, [](auto xs) { return 0.5 - sin(xs[0]); });
  safe.smooth_barrier = safe.barrier;
  safe.sample_box = sample_box;
  safe.sampler = box_sampler(sample_box);
  safe.description = "first link angle restricted: sin(theta1) <= 1/2 (shifted)";

  SystemBundle bundle;
  bundle.model = std::move(m);
  bundle.safe = std::move(safe);
  bundle.x0_box = Box{{-0.5, -0.5, -0.5, -0.5, -0.5, -0.5}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5}};
  bundle.success = SuccessSpec{SuccessSpec::Kind::kAnglesUpright, {0, 1, 2}, kPi / 40.0, 3.0};
  return bundle;
}

// ---- registry --------------------------------------------------------------------

SystemBundle make_system(const std::string& name, const std::optional<FhnTopology>& topo) {
  if (name == "gbm") {
    SystemBundle bundle;
    bundle.model = make_gbm(-1.0, 1.0);
    SafeRegionSpec safe;
    safe.barrier = ad::make_field(1, [](auto xs) { return 4.0 - xs[0] * xs[0]; });
    safe.smooth_barrier = safe.barrier;
    safe.sample_box = Box{{-1.5}, {1.5}};
    safe.sampler = box_sampler(safe.sample_box);
    safe.description = "toy interval |x| <= 2";
    bundle.safe = std::move(safe);
    bundle.x0_box = Box{{0.5}, {1.5}};
    bundle.success = SuccessSpec{SuccessSpec::Kind::kTargetDistance, {0}, 0.1, 2.0};
    return bundle;
  }
  if (name == "double_pendulum") return make_double_pendulum();
  if (name == "bicycle") return make_bicycle();
  if (name == "fhn") return make_fhn_variance_network(topo.value_or(FhnTopology{}));
  if (name == "three_link") return make_three_link();
  throw std::invalid_argument("unknown system '" + name + "' (valid: gbm, double_pendulum, bicycle, fhn, three_link)");
}

std::vector<std::string> system_names() {
  return {"gbm", "double_pendulum", "bicycle", "fhn", "three_link"};
}

}  // namespace fessnc::dyn
