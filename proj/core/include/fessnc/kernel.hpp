#pragma once

// Nonparametric kernel controller: self-normalized Gaussian-RBF weighting of
// straight-line transport directions between paired source and target
// samples, minus the model drift. Untrained; the projection wrapper supplies
// the guarantees.

#include <atomic>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fessnc/dynamics.hpp"
#include "fessnc/projection.hpp"

namespace fessnc::kernel {

class KernelController {
 public:
  // Sources and targets are paired index-wise; `flow_horizon` maps simulation
  // time onto the transport parameter t = clamp(sim_t / flow_horizon, 0, 0.99).
  KernelController(std::vector<std::vector<double>> sources,
                   std::vector<std::vector<double>> targets, double bandwidth,
                   std::function<void(std::span<const double>, std::span<double>)> drift,
                   double flow_horizon);

  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] double bandwidth() const { return bandwidth_; }
  [[nodiscard]] double flow_horizon() const { return flow_horizon_; }

  // u(z, t) for t in [0, 1).
  [[nodiscard]] std::vector<double> control(std::span<const double> z, double t) const;

  // Normalized kernel weights at (z, t); sums to one (uniform fallback when
  // every kernel value underflows to zero, which also sets the flag).
  [[nodiscard]] std::vector<double> weights(std::span<const double> z, double t) const;

  [[nodiscard]] bool underflow_flagged() const { return underflow_->load(); }

  [[nodiscard]] proj::ControlFn as_control_fn() const;

 private:
  std::vector<std::vector<double>> sources_, targets_;
  double bandwidth_;
  std::function<void(std::span<const double>, std::span<double>)> drift_;
  double flow_horizon_;
  int dim_;
  std::shared_ptr<std::atomic<bool>> underflow_;
};

proj::ProjectedController wrap_with_fessnc(const KernelController& kc,
                                           std::shared_ptr<const ad::Field> potential,
                                           dyn::SafeRegionSpec region, proj::ScalarMap alpha,
                                           double c, dyn::SdeModel model, double tau = 1e-12);

// Parse states out of the trajectory CSV format (columns t, x1..xd, u1..ud).
std::vector<std::vector<double>> states_from_trajectory_csv(const std::string& text);

}  // namespace fessnc::kernel
