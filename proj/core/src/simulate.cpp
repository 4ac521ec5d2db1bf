#include "fessnc/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <sstream>
#include <thread>

namespace fessnc::sim {

namespace {

bool finite(std::span<const double> v) {
  for (double e : v) {
    if (!std::isfinite(e)) return false;
  }
  return true;
}

double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

}  // namespace

Trajectory euler_maruyama(const dyn::SdeModel& model, const proj::ControlFn& controller,
                          std::span<const double> x0, double dt, double horizon,
                          std::uint64_t seed) {
  if (dt <= 0.0) throw std::invalid_argument("euler_maruyama: dt must be positive");
  if (horizon < 0.0) throw std::invalid_argument("euler_maruyama: horizon must be nonnegative");
  if (static_cast<int>(x0.size()) != model.d) {
    throw std::invalid_argument("euler_maruyama: initial state dimension mismatch");
  }

  const int steps = static_cast<int>(std::llround(horizon / dt));
  Trajectory traj;
  traj.seed = seed;
  traj.dt = dt;
  traj.times.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.controls.reserve(static_cast<std::size_t>(steps) + 1);

  Rng rng(splitmix64(seed));
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> u(static_cast<std::size_t>(model.d));
  std::vector<double> f(static_cast<std::size_t>(model.d));
  Eigen::MatrixXd g(model.d, model.r);
  Eigen::VectorXd noise(model.r);

  for (int k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    try {
      controller(x, t, u);
    } catch (const std::runtime_error&) {
      // Controller arithmetic overflowed on an astronomically large state:
      // truncate and record the divergence rather than aborting the batch.
      traj.diverged = true;
      break;
    }
    if (!finite(u)) {
      traj.diverged = true;
      break;
    }
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.controls.push_back(u);
    if (k == steps) break;

    model.drift(x, f);
    model.diffusion(x, g);
    for (int j = 0; j < model.r; ++j) noise(j) = gaussian(rng);
    const Eigen::VectorXd kick = g * noise;
    const double root_dt = std::sqrt(dt);
    for (int i = 0; i < model.d; ++i) {
      x[static_cast<std::size_t>(i)] += dt * (f[static_cast<std::size_t>(i)] + u[static_cast<std::size_t>(i)]) +
                                        root_dt * kick(i);
    }
    if (!finite(x)) {
      traj.diverged = true;  // truncated honestly, no clamping
      break;
    }
  }
  return traj;
}

double lyapunov_slope(const Trajectory& traj) {
  const std::size_t n = traj.times.size();
  if (n < 2) return 0.0;
  const std::size_t start = n / 2;
  double sum_t = 0.0, sum_y = 0.0, sum_tt = 0.0, sum_ty = 0.0;
  std::size_t count = 0;
  for (std::size_t k = start; k < n; ++k) {
    double norm = 0.0;
    for (double xi : traj.states[k]) norm += xi * xi;
    norm = std::sqrt(norm);
    if (norm <= 0.0) return -std::numeric_limits<double>::infinity();
    const double t = traj.times[k];
    const double y = std::log(norm);
    sum_t += t;
    sum_y += y;
    sum_tt += t * t;
    sum_ty += t * y;
    ++count;
  }
  const double nn = static_cast<double>(count);
  const double denom = nn * sum_tt - sum_t * sum_t;
  if (denom == 0.0) return 0.0;
  return (nn * sum_ty - sum_t * sum_y) / denom;
}

double safety_rate(const Trajectory& traj, const dyn::SafeRegionSpec& region) {
  if (traj.states.empty()) return 1.0;
  std::size_t inside = 0;
  for (const auto& x : traj.states) {
    if (region.barrier->eval(std::span<const double>(x)) >= 0.0) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(traj.states.size());
}

namespace {

bool step_satisfies(const Trajectory& traj, std::size_t k, const dyn::SuccessSpec& c) {
  const auto& x = traj.states[k];
  switch (c.kind) {
    case dyn::SuccessSpec::Kind::kAnglesUpright: {
      for (int idx : c.indices) {
        if (std::abs(wrap_angle(x[static_cast<std::size_t>(idx)])) >= c.threshold) return false;
      }
      return true;
    }
    case dyn::SuccessSpec::Kind::kTargetDistance: {
      double acc = 0.0;
      for (int idx : c.indices) acc += x[static_cast<std::size_t>(idx)] * x[static_cast<std::size_t>(idx)];
      return std::sqrt(acc) < c.threshold;
    }
    default:
      return false;
  }
}

}  // namespace

bool success(const Trajectory& traj, const dyn::SuccessSpec& criterion) {
  if (traj.states.empty()) return false;
  switch (criterion.kind) {
    case dyn::SuccessSpec::Kind::kNone:
      return false;
    case dyn::SuccessSpec::Kind::kSupNormBelow: {
      const auto& x = traj.states.back();
      double sup = 0.0;
      for (int idx : criterion.indices) sup = std::max(sup, std::abs(x[static_cast<std::size_t>(idx)]));
      return sup < criterion.threshold && !traj.diverged;
    }
    case dyn::SuccessSpec::Kind::kAnglesUpright:
    case dyn::SuccessSpec::Kind::kTargetDistance: {
      const double tol = 1e-9;
      bool in_run = false;
      double run_start = 0.0;
      for (std::size_t k = 0; k < traj.states.size(); ++k) {
        if (step_satisfies(traj, k, criterion)) {
          if (!in_run) {
            in_run = true;
            run_start = traj.times[k];
          }
          if (traj.times[k] - run_start >= criterion.duration - tol) return true;
        } else {
          in_run = false;
        }
      }
      return false;
    }
  }
  return false;
}

double control_energy(const Trajectory& traj) {
  if (traj.controls.size() < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < traj.controls.size(); ++k) {
    double sq = 0.0;
    for (double ui : traj.controls[k]) sq += ui * ui;
    acc += sq * traj.dt;
  }
  return acc;
}

double min_target_distance(const Trajectory& traj, const dyn::SuccessSpec& criterion) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& x : traj.states) {
    double acc = 0.0;
    if (criterion.indices.empty()) {
      for (double xi : x) acc += xi * xi;
    } else {
      for (int idx : criterion.indices) acc += x[static_cast<std::size_t>(idx)] * x[static_cast<std::size_t>(idx)];
    }
    best = std::min(best, std::sqrt(acc));
  }
  return best;
}

MetricsReport compute_metrics(const Trajectory& traj, const dyn::SafeRegionSpec& region,
                              const dyn::SuccessSpec& criterion) {
  MetricsReport rep;
  rep.safety_rate = safety_rate(traj, region);
  rep.success = success(traj, criterion);
  rep.control_energy = control_energy(traj);
  rep.lyapunov_slope = lyapunov_slope(traj);
  rep.min_target_distance = min_target_distance(traj, criterion);
  rep.diverged = traj.diverged;
  return rep;
}

std::vector<Trajectory> batch_rollout(const dyn::SdeModel& model, const proj::ControlFn& controller,
                                      const InitialStateFn& x0, int count, double dt,
                                      double horizon, std::uint64_t base_seed, int workers) {
  std::vector<Trajectory> out(static_cast<std::size_t>(std::max(0, count)));
  if (count <= 0) return out;
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, count));

  auto run_range = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      Rng rng = substream(base_seed, static_cast<std::uint64_t>(i));
      const std::vector<double> start = x0(rng);
      const std::uint64_t traj_seed = splitmix64(base_seed ^ splitmix64(static_cast<std::uint64_t>(i) + 0x5EEDULL));
      out[static_cast<std::size_t>(i)] = euler_maruyama(model, controller, start, dt, horizon, traj_seed);
    }
  };

  if (workers == 1) {
    run_range(0, count);
    return out;
  }
  std::vector<std::future<void>> futures;
  const int chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int lo = w * chunk;
    const int hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    futures.push_back(std::async(std::launch::async, run_range, lo, hi));
  }
  for (auto& f1 : futures) f1.get();
  return out;
}

std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream ss;
  ss.precision(17);
  const std::size_t d = traj.states.empty() ? 0 : traj.states.front().size();
  ss << "t";
  for (std::size_t i = 1; i <= d; ++i) ss << ",x" << i;
  for (std::size_t i = 1; i <= d; ++i) ss << ",u" << i;
  ss << "\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    ss << traj.times[k];
    for (double xi : traj.states[k]) ss << ',' << xi;
    for (double ui : traj.controls[k]) ss << ',' << ui;
    ss << "\n";
  }
  return ss.str();
}

}  // namespace fessnc::sim
