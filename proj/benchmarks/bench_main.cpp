// Microbenchmarks for the trace backends, the projection hot path, and one
// training iteration across state dimensions.

#include <benchmark/benchmark.h>

#include "fessnc/dynamics.hpp"
#include "fessnc/generator.hpp"
#include "fessnc/nets.hpp"
#include "fessnc/projection.hpp"
#include "fessnc/training.hpp"

using namespace fessnc;

namespace {

nets::IcnnPotential make_potential(int d, Rng& rng) {
  return nets::IcnnPotential::random_init({d, d >= 50 ? 100 : 12, d >= 50 ? 100 : 12, 1}, 1e-3,
                                          2.0, rng);
}

void BM_trace_exact(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(1);
  auto pot = make_potential(d, rng);
  auto field = pot.as_field();
  std::vector<double> x(static_cast<std::size_t>(d), 0.3);
  std::vector<double> g(static_cast<std::size_t>(d));
  for (auto& gi : g) gi = uniform(rng, -1.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ad::exact_generator_trace(*field, x, g, d, 1));
  }
}
BENCHMARK(BM_trace_exact)->Arg(4)->Arg(20)->Arg(100);

void BM_trace_vector_identity(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(1);
  auto pot = make_potential(d, rng);
  auto field = pot.as_field();
  std::vector<double> x(static_cast<std::size_t>(d), 0.3);
  std::vector<double> g(static_cast<std::size_t>(d));
  for (auto& gi : g) gi = uniform(rng, -1.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gen::vector_identity_trace(*field, x, g));
  }
}
BENCHMARK(BM_trace_vector_identity)->Arg(4)->Arg(20)->Arg(100);

void BM_trace_hutchinson(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(1);
  auto pot = make_potential(d, rng);
  auto field = pot.as_field();
  std::vector<double> x(static_cast<std::size_t>(d), 0.3);
  Eigen::MatrixXd g(d, 2);
  for (int i = 0; i < d; ++i) {
    g(i, 0) = uniform(rng, -1.0, 1.0);
    g(i, 1) = uniform(rng, -1.0, 1.0);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        gen::hutchinson_trace(*field, x, g, 1, gen::NoiseKind::kRademacher, rng));
  }
}
BENCHMARK(BM_trace_hutchinson)->Arg(4)->Arg(20)->Arg(100);

void BM_projected_control_eval(benchmark::State& state) {
  auto bundle = dyn::make_bicycle();
  Rng rng(2);
  auto ctrl = nets::ControllerNet::random_init({4, 12, 12, 4}, nets::Activation::kTanh, {}, rng);
  ctrl.normalize_in_place(50);
  auto pot = nets::IcnnPotential::random_init({4, 12, 12, 1}, 1e-3, 2.0, rng);
  proj::ControlFn base = [&ctrl](std::span<const double> x, double, std::span<double> o) {
    const auto u = ctrl(x);
    std::copy(u.begin(), u.end(), o.begin());
  };
  proj::ProjectedController controller(base, pot.as_field(), bundle.safe,
                                       proj::linear_class_k(1.0), -0.5, bundle.model);
  std::vector<double> x{0.4, -0.2, 0.1, 0.3};
  std::vector<double> out(4);
  for (auto _ : state) {
    controller(x, 0.0, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_projected_control_eval);

void BM_train_iteration(benchmark::State& state) {
  const int n_osc = static_cast<int>(state.range(0));
  dyn::FhnTopology topo;
  topo.n = n_osc;
  topo.ring_degree = 2;
  auto bundle = dyn::make_fhn_variance_network(topo);
  train::TrainConfig cfg = train::default_train_config("fhn");
  const int d = 2 * n_osc;
  cfg.nets.controller_widths = {d, 200, 200, d};
  cfg.nets.icnn_widths = {d, 100, 100, 1};
  cfg.batch = 32;
  cfg.iters = 1;
  cfg.seed = 3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train::train(bundle, cfg));
  }
}
BENCHMARK(BM_train_iteration)->Arg(2)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
