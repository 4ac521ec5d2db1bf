#include "fessnc/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fessnc::kernel {

KernelController::KernelController(
    std::vector<std::vector<double>> sources, std::vector<std::vector<double>> targets,
    double bandwidth, std::function<void(std::span<const double>, std::span<double>)> drift,
    double flow_horizon)
    : sources_(std::move(sources)),
      targets_(std::move(targets)),
      bandwidth_(bandwidth),
      drift_(std::move(drift)),
      flow_horizon_(flow_horizon),
      underflow_(std::make_shared<std::atomic<bool>>(false)) {
  if (sources_.empty() || sources_.size() != targets_.size()) {
    throw std::invalid_argument("KernelController: need nonempty paired sample sets");
  }
  if (bandwidth_ <= 0.0) throw std::invalid_argument("KernelController: bandwidth must be positive");
  if (flow_horizon_ <= 0.0) throw std::invalid_argument("KernelController: flow horizon must be positive");
  dim_ = static_cast<int>(sources_.front().size());
  for (const auto& s : sources_) {
    if (static_cast<int>(s.size()) != dim_) throw std::invalid_argument("KernelController: ragged samples");
  }
  for (const auto& s : targets_) {
    if (static_cast<int>(s.size()) != dim_) throw std::invalid_argument("KernelController: ragged samples");
  }
}

std::vector<double> KernelController::weights(std::span<const double> z, double t) const {
  if (t >= 1.0) throw std::invalid_argument("KernelController: transport parameter t must be < 1");
  const std::size_t n = sources_.size();
  std::vector<double> w(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dist_sq = 0.0;
    for (int j = 0; j < dim_; ++j) {
      const double interp = (1.0 - t) * sources_[i][static_cast<std::size_t>(j)] +
                            t * targets_[i][static_cast<std::size_t>(j)];
      const double diff = interp - z[static_cast<std::size_t>(j)];
      dist_sq += diff * diff;
    }
    w[i] = std::exp(-dist_sq / bandwidth_);
    sum += w[i];
  }
  if (sum <= 0.0) {
    // Every kernel value underflowed: fall back to the unweighted mean and flag it.
    underflow_->store(true);
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
    return w;
  }
  for (auto& wi : w) wi /= sum;
  return w;
}

std::vector<double> KernelController::control(std::span<const double> z, double t) const {
  const std::vector<double> w = weights(z, t);
  std::vector<double> u(static_cast<std::size_t>(dim_), 0.0);
  const double inv_gap = 1.0 / (1.0 - t);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    for (int j = 0; j < dim_; ++j) {
      u[static_cast<std::size_t>(j)] +=
          w[i] * (targets_[i][static_cast<std::size_t>(j)] - z[static_cast<std::size_t>(j)]) * inv_gap;
    }
  }
  std::vector<double> f(static_cast<std::size_t>(dim_));
  drift_(z, f);
  for (int j = 0; j < dim_; ++j) u[static_cast<std::size_t>(j)] -= f[static_cast<std::size_t>(j)];
  return u;
}

proj::ControlFn KernelController::as_control_fn() const {
  return [self = *this](std::span<const double> x, double sim_t, std::span<double> out) {
    const double t = std::clamp(sim_t / self.flow_horizon_, 0.0, 0.99);
    const std::vector<double> u = self.control(x, t);
    std::copy(u.begin(), u.end(), out.begin());
  };
}

proj::ProjectedController wrap_with_fessnc(const KernelController& kc,
                                           std::shared_ptr<const ad::Field> potential,
                                           dyn::SafeRegionSpec region, proj::ScalarMap alpha,
                                           double c, dyn::SdeModel model, double tau) {
  return proj::compose_fessnc(kc.as_control_fn(), std::move(potential), std::move(region),
                              std::move(alpha), c, std::move(model), tau);
}

std::vector<std::vector<double>> states_from_trajectory_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int d = -1;
  std::vector<std::vector<double>> states;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (d < 0) {
      // header: t,x1..xd,u1..ud
      int xcols = 0;
      std::istringstream hs(line);
      std::string col;
      while (std::getline(hs, col, ',')) {
        if (!col.empty() && col[0] == 'x') ++xcols;
      }
      if (xcols == 0) throw std::invalid_argument("trajectory CSV: no state columns in header");
      d = xcols;
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) < 1 + d) {
      throw std::invalid_argument("trajectory CSV: short row");
    }
    states.emplace_back(row.begin() + 1, row.begin() + 1 + d);
  }
  return states;
}

}  // namespace fessnc::kernel
