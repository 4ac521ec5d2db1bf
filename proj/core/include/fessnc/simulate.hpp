#pragma once

// Euler-Maruyama integration of controlled SDEs and the evaluation metrics
// (safety rate, success, control energy, fitted Lyapunov slope).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fessnc/dynamics.hpp"
#include "fessnc/projection.hpp"

namespace fessnc::sim {

struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> controls;
  std::uint64_t seed = 0;
  double dt = 0.0;
  bool diverged = false;
};

// x_{k+1} = x_k + dt (f + u) + sqrt(dt) g zeta_k, zeta_k ~ N(0, I_r).
// Non-finite states truncate the trajectory and mark it diverged.
Trajectory euler_maruyama(const dyn::SdeModel& model, const proj::ControlFn& controller,
                          std::span<const double> x0, double dt, double horizon,
                          std::uint64_t seed);

// Least-squares slope of log ||x(t)|| over the second half of the horizon.
// Returns -inf when the fitted window contains an exactly-zero state.
double lyapunov_slope(const Trajectory& traj);

// Fraction of steps with h(x_k) >= 0 (hard barrier).
double safety_rate(const Trajectory& traj, const dyn::SafeRegionSpec& region);

// System-specific success criterion; consecutive-time windows are boundary
// inclusive.
bool success(const Trajectory& traj, const dyn::SuccessSpec& criterion);

// Left Riemann sum of ||u||^2 dt.
double control_energy(const Trajectory& traj);

double min_target_distance(const Trajectory& traj, const dyn::SuccessSpec& criterion);

struct MetricsReport {
  double safety_rate = 0.0;
  bool success = false;
  double control_energy = 0.0;
  double lyapunov_slope = 0.0;
  double min_target_distance = 0.0;
  bool diverged = false;
};

MetricsReport compute_metrics(const Trajectory& traj, const dyn::SafeRegionSpec& region,
                              const dyn::SuccessSpec& criterion);

// Seeded rollouts fanned across a worker pool; trajectory i uses the
// substream (base_seed, i), so the result set is scheduling independent.
using InitialStateFn = std::function<std::vector<double>(Rng&)>;
std::vector<Trajectory> batch_rollout(const dyn::SdeModel& model, const proj::ControlFn& controller,
                                      const InitialStateFn& x0, int count, double dt,
                                      double horizon, std::uint64_t base_seed, int workers = 0);

// CSV with header t,x1..xd,u1..ud, one row per step, 17 significant digits.
std::string trajectory_csv(const Trajectory& traj);

}  // namespace fessnc::sim
