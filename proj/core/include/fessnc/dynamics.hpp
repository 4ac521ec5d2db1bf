#pragma once

// Controlled SDE abstraction dx = f_u(x) dt + g(x) dB_t and the benchmark
// systems, all shifted so the target equilibrium sits at the origin.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fessnc/autodiff.hpp"
#include "fessnc/rng.hpp"

namespace fessnc::dyn {

struct Box {
  std::vector<double> lo, hi;

  [[nodiscard]] int dim() const { return static_cast<int>(lo.size()); }
  [[nodiscard]] std::vector<double> sample(Rng& rng) const {
    std::vector<double> x(lo.size());
    for (std::size_t i = 0; i < lo.size(); ++i) x[i] = uniform(rng, lo[i], hi[i]);
    return x;
  }
  [[nodiscard]] bool contains(std::span<const double> x) const {
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    }
    return true;
  }
};

struct SdeModel {
  int d = 0;
  int r = 0;
  std::function<void(std::span<const double>, std::span<double>)> drift;
  std::function<void(std::span<const double>, Eigen::MatrixXd&)> diffusion;
  Box state_space_hint;  // box used for sampling-based checks
  std::string name;

  [[nodiscard]] std::vector<double> drift_at(std::span<const double> x) const {
    std::vector<double> f(static_cast<std::size_t>(d));
    drift(x, f);
    return f;
  }
  [[nodiscard]] Eigen::MatrixXd diffusion_at(std::span<const double> x) const {
    Eigen::MatrixXd g(d, r);
    diffusion(x, g);
    return g;
  }
};

struct SafeRegionSpec {
  std::shared_ptr<const ad::Field> barrier;         // hard h; C = {h >= 0}
  std::shared_ptr<const ad::Field> smooth_barrier;  // C^2 variant used wherever grad/Hess of h is needed
  Box sample_box;                                   // training-data box
  std::function<std::vector<double>(Rng&)> sampler; // one draw from the safe region
  std::string description;

  [[nodiscard]] double h(std::span<const double> x) const { return barrier->eval(x); }
  [[nodiscard]] bool contains(std::span<const double> x) const { return h(x) >= 0.0; }
};

// Success criteria attached to each benchmark (thresholds configurable).
struct SuccessSpec {
  enum class Kind { kNone, kAnglesUpright, kTargetDistance, kSupNormBelow };
  Kind kind = Kind::kNone;
  std::vector<int> indices;  // angle indices / position indices / component indices
  double threshold = 0.1;    // rad for angles, distance otherwise
  double duration = 2.0;     // consecutive seconds required (ignored for kSupNormBelow)
};

struct FhnTopology {
  int n = 50;
  int ring_degree = 4;       // nearest neighbours on the ring (even)
  double rewire_prob = 0.1;  // Watts-Strogatz rewiring probability
  std::uint64_t seed = 1;
};

struct SystemBundle {
  SdeModel model;
  SafeRegionSpec safe;
  Box x0_box;  // default rollout initial-condition box
  SuccessSpec success;
  std::optional<FhnTopology> topology;  // recorded for fhn runs
};

// --- factories ----------------------------------------------------------------

SdeModel make_gbm(double a, double b);

SystemBundle make_double_pendulum();
SystemBundle make_bicycle();
SystemBundle make_fhn_variance_network(const FhnTopology& topo);
SystemBundle make_three_link();

// Mass matrix M(theta) of the 3-link pendulum at unit parameters; symmetric
// positive definite over the sampling box.
Eigen::Matrix3d three_link_mass_matrix(std::span<const double> angles);

// Watts-Strogatz small-world graph Laplacian (rows sum to zero).
Eigen::MatrixXd watts_strogatz_laplacian(int n, int ring_degree, double rewire_prob,
                                         std::uint64_t seed);

// Registry: "gbm" | "double_pendulum" | "bicycle" | "fhn" | "three_link".
SystemBundle make_system(const std::string& name,
                         const std::optional<FhnTopology>& topo = std::nullopt);
std::vector<std::string> system_names();

}  // namespace fessnc::dyn
