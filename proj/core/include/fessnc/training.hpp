#pragma once

// Heuristic learning stage: safe-region samplers, the stabilization and
// safety losses, adaptive-moment gradient descent, and the end-to-end
// training loop (sample batch -> summed loss -> parameter step -> convexity
// clamp -> spectral normalization).

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fessnc/dynamics.hpp"
#include "fessnc/generator.hpp"
#include "fessnc/nets.hpp"
#include "fessnc/projection.hpp"

namespace fessnc::train {

struct NetSpec {
  std::vector<int> controller_widths;
  std::vector<int> icnn_widths;
  std::vector<int> classk_widths{1, 10, 10, 1};
  nets::Activation activation = nets::Activation::kTanh;
  std::vector<std::uint8_t> mask;  // empty = all components actuated
  double epsilon = 1e-3;
  double floor_exponent = 2.0;
  int quadrature_nodes = 32;
  double srelu_knee = 1.0;
};

NetSpec default_net_spec(const std::string& system);

struct TrainConfig {
  std::string system = "bicycle";
  int batch = 500;
  int iters = 500;
  double lr = 0.05;
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double c = -0.5;
  Eigen::MatrixXd control_weight;           // R; empty = identity
  std::optional<gen::TraceMode> trace;      // default: vector for r=1, hutchinson:1 otherwise
  std::uint64_t seed = 0;
  NetSpec nets;
  int sn_iterations = 1;  // power iterations per training step

  void validate() const;
};

TrainConfig default_train_config(const std::string& system);

struct HistoryRow {
  int iteration = 0;
  double loss_es = 0.0;
  double loss_sf = 0.0;
  double total = 0.0;
};

struct TrainResult {
  nets::ControllerNet controller;
  nets::IcnnPotential potential;
  nets::ClassKNet classk;
  std::vector<HistoryRow> history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int iteration, int point_index, std::vector<double> point, const std::string& what)
      : std::runtime_error(what), iteration(iteration), point_index(point_index), point(std::move(point)) {}
  int iteration;
  int point_index;
  std::vector<double> point;
};

// N i.i.d. draws from the system's safe-region sampler.
std::vector<std::vector<double>> sample_safe_region(const dyn::SystemBundle& bundle, int n, Rng& rng);
std::vector<std::vector<double>> sample_safe_region(const std::string& system, int n, Rng& rng);

// (1/N) sum_i [u^T R u + lambda1 * max(0, L_u V(x_i) - c V(x_i))]
double stability_loss(const std::vector<std::vector<double>>& batch, const gen::StateMap& u,
                      const ad::Field& potential, double c, const Eigen::MatrixXd& control_weight,
                      double lambda1, const gen::TraceMode& mode, const dyn::SdeModel& model,
                      Rng& rng);

// (1/N) sum_i [u^T R u + lambda2 * max(0, -L_u h(x_i) - alpha(h(x_i)))]
double safety_loss(const std::vector<std::vector<double>>& batch, const gen::StateMap& u,
                   const dyn::SafeRegionSpec& region, const proj::ScalarMap& alpha,
                   const Eigen::MatrixXd& control_weight, double lambda2,
                   const gen::TraceMode& mode, const dyn::SdeModel& model, Rng& rng);

// Adaptive-moment gradient descent with standard defaults.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::vector<double>& params, std::span<const double> grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

TrainResult train(const dyn::SystemBundle& bundle, const TrainConfig& config);

// Taped batch loss used inside the loop; exposed so the gradient-integrity
// tests can differentiate exactly what training differentiates.
struct TapedLoss {
  ad::Var loss_es;
  ad::Var loss_sf;
  ad::Var total;
};
TapedLoss taped_batch_loss(ad::Tape& tape, std::span<const ad::Var> theta,
                           const std::vector<std::vector<double>>& batch,
                           const dyn::SystemBundle& bundle, const nets::ControllerNet& controller,
                           const nets::IcnnPotential& potential, const nets::ClassKNet& classk,
                           const TrainConfig& config, Rng& rng);

// Flat parameter vector layout: [controller | potential | classk].
std::vector<double> pack_params(const nets::ControllerNet& c, const nets::IcnnPotential& v,
                                const nets::ClassKNet& k);
void unpack_params(std::span<const double> theta, nets::ControllerNet& c, nets::IcnnPotential& v,
                   nets::ClassKNet& k);

}  // namespace fessnc::train
