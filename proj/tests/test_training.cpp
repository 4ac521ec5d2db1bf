#include <doctest.h>

#include <cmath>

#include "fessnc/training.hpp"
#include "test_support.hpp"

using namespace fessnc;
using testutil::rel_err;

namespace {

dyn::SdeModel damped_linear(int d, double rate) {
  dyn::SdeModel m;
  m.d = d;
  m.r = 1;
  m.name = "damped";
  m.drift = [rate](std::span<const double> x, std::span<double> f) {
    for (std::size_t i = 0; i < x.size(); ++i) f[i] = rate * x[i];
  };
  m.diffusion = [](std::span<const double>, Eigen::MatrixXd& g) { g.setZero(); };
  return m;
}

std::shared_ptr<const ad::Field> half_norm(int d) {
  return ad::make_field(d, [](auto xs) {
    using S = std::remove_cvref_t<decltype(xs[0])>;
    S acc = S(0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) acc = acc + xs[i] * xs[i];
    return 0.5 * acc;
  });
}

}  // namespace

TEST_CASE("sample_safe_region: empty batch, bounds, determinism") {
  Rng rng(1);
  CHECK(train::sample_safe_region("bicycle", 0, rng).empty());

  auto pts = train::sample_safe_region("bicycle", 10000, rng);
  for (const auto& p : pts) {
    CHECK(std::hypot(p[0], p[1]) <= 3.0 + 1e-12);
    CHECK(std::abs(p[2]) <= 3.0);
    CHECK(std::abs(p[3]) <= 3.0);
  }

  Rng a(42), b(42);
  CHECK(train::sample_safe_region("double_pendulum", 32, a) ==
        train::sample_safe_region("double_pendulum", 32, b));
}

TEST_CASE("stability_loss: zero when feasible with zero control, quadratic-only case") {
  auto gbm = dyn::make_gbm(-1.0, 1.0);
  auto v1 = half_norm(1);
  Rng rng(2);
  std::vector<std::vector<double>> batch{{0.5}, {-1.0}, {1.5}};
  const double loss =
      train::stability_loss(batch, gen::zero_control(), *v1, -0.5, Eigen::MatrixXd(), 0.5,
                            gen::TraceMode::vector_identity(), gbm, rng);
  CHECK(loss == doctest::Approx(0.0));

  // Single point, R = identity, forced u = (1,0,0,0) with an inactive hinge:
  // loss is exactly u^T R u = 1.
  auto model4 = damped_linear(4, -2.0);
  auto v4 = half_norm(4);
  gen::StateMap forced = [](std::span<const double>, std::span<double> o) {
    o[0] = 1.0;
    o[1] = o[2] = o[3] = 0.0;
  };
  std::vector<std::vector<double>> single{{-0.5, 0.0, 0.0, 0.0}};
  const double loss1 = train::stability_loss(single, forced, *v4, -0.5, Eigen::MatrixXd(), 1.0,
                                             gen::TraceMode::vector_identity(), model4, rng);
  CHECK(loss1 == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS((void)train::stability_loss({}, gen::zero_control(), *v1, -0.5,
                                              Eigen::MatrixXd(), 0.5,
                                              gen::TraceMode::vector_identity(), gbm, rng),
                  std::invalid_argument);
}

TEST_CASE("stability_loss: two-point hand total") {
  // dx = x dt, V = x^2/2, c = -1, u = 0: hinge = x^2 + x^2/2 = 1.5 x^2.
  // Batch {1, 2}, lambda1 = 2: mean of (2*1.5, 2*6.0) = 7.5.
  auto model = damped_linear(1, 1.0);
  auto v = half_norm(1);
  Rng rng(3);
  std::vector<std::vector<double>> batch{{1.0}, {2.0}};
  const double loss = train::stability_loss(batch, gen::zero_control(), *v, -1.0,
                                            Eigen::MatrixXd(), 2.0,
                                            gen::TraceMode::vector_identity(), model, rng);
  CHECK(loss == doctest::Approx(7.5).epsilon(1e-10));
}

TEST_CASE("safety_loss: satisfied constraint gives zero; 1-D toy penalty 1.43") {
  auto model = damped_linear(1, 1.0);
  dyn::SafeRegionSpec region;
  region.barrier = ad::make_field(1, [](auto xs) { return 1.0 - xs[0] * xs[0]; });
  region.smooth_barrier = region.barrier;
  region.sampler = [](Rng& r) { return std::vector<double>{uniform(r, -1.0, 1.0)}; };
  Rng rng(4);

  std::vector<std::vector<double>> inside{{0.1}, {-0.2}};
  const double feasible = train::safety_loss(inside, gen::zero_control(), region,
                                             proj::linear_class_k(1.0), Eigen::MatrixXd(), 1.0,
                                             gen::TraceMode::vector_identity(), model, rng);
  CHECK(feasible == doctest::Approx(0.0));

  std::vector<std::vector<double>> edge{{0.9}};
  const double penalty = train::safety_loss(edge, gen::zero_control(), region,
                                            proj::linear_class_k(1.0), Eigen::MatrixXd(), 1.0,
                                            gen::TraceMode::vector_identity(), model, rng);
  CHECK(penalty == doctest::Approx(1.43).epsilon(1e-12));

  // batch order invariance (mean)
  std::vector<std::vector<double>> fwd{{0.9}, {0.5}, {-0.3}};
  std::vector<std::vector<double>> rev{{-0.3}, {0.5}, {0.9}};
  const double a = train::safety_loss(fwd, gen::zero_control(), region, proj::linear_class_k(1.0),
                                      Eigen::MatrixXd(), 1.0, gen::TraceMode::vector_identity(),
                                      model, rng);
  const double b = train::safety_loss(rev, gen::zero_control(), region, proj::linear_class_k(1.0),
                                      Eigen::MatrixXd(), 1.0, gen::TraceMode::vector_identity(),
                                      model, rng);
  CHECK(a == doctest::Approx(b).epsilon(1e-13));
}

TEST_CASE("taped batch loss equals the untaped losses and its gradient matches FD") {
  const auto bundle = dyn::make_system("gbm");
  train::TrainConfig cfg = train::default_train_config("gbm");
  cfg.nets.controller_widths = {1, 3, 1};
  cfg.nets.icnn_widths = {1, 3, 1};
  cfg.nets.classk_widths = {1, 3, 1};
  cfg.seed = 9;

  Rng init(9);
  auto ctrl = nets::ControllerNet::random_init(cfg.nets.controller_widths, cfg.nets.activation,
                                               {}, init);
  auto pot = nets::IcnnPotential::random_init(cfg.nets.icnn_widths, cfg.nets.epsilon,
                                              cfg.nets.floor_exponent, init);
  auto kn = nets::ClassKNet::random_init(cfg.nets.classk_widths, init, cfg.nets.quadrature_nodes);
  const std::vector<double> theta0 = train::pack_params(ctrl, pot, kn);
  REQUIRE(theta0.size() <= 50);

  Rng brng(77);
  const auto batch = train::sample_safe_region(bundle, 8, brng);

  auto loss_value = [&](std::span<const double> theta) {
    nets::ControllerNet c2 = ctrl;
    nets::IcnnPotential p2 = pot;
    nets::ClassKNet k2 = kn;
    train::unpack_params(theta, c2, p2, k2);
    ad::Tape tape;
    std::vector<ad::Var> th(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) th[i] = tape.leaf(theta[i]);
    Rng dummy(0);
    auto loss = train::taped_batch_loss(tape, th, batch, bundle, c2, p2, k2, cfg, dummy);
    return ad::value_of(loss.total);
  };

  // value equivalence against the independent double-path losses
  {
    ad::Tape tape;
    std::vector<ad::Var> th(theta0.size());
    for (std::size_t i = 0; i < theta0.size(); ++i) th[i] = tape.leaf(theta0[i]);
    Rng dummy(0);
    auto taped = train::taped_batch_loss(tape, th, batch, bundle, ctrl, pot, kn, cfg, dummy);

    gen::StateMap umap = [&ctrl](std::span<const double> x, std::span<double> o) {
      auto u = ctrl(x);
      std::copy(u.begin(), u.end(), o.begin());
    };
    proj::ScalarMap alpha = [&kn](double s) { return kn.value_extended(s); };
    Rng dummy2(0);
    const double les = train::stability_loss(batch, umap, *pot.as_field(), cfg.c,
                                             Eigen::MatrixXd(), cfg.lambda1,
                                             gen::TraceMode::vector_identity(), bundle.model, dummy2);
    const double lsf = train::safety_loss(batch, umap, bundle.safe, alpha, Eigen::MatrixXd(),
                                          cfg.lambda2, gen::TraceMode::vector_identity(),
                                          bundle.model, dummy2);
    CHECK(rel_err(ad::value_of(taped.loss_es), les) < 1e-10);
    CHECK(rel_err(ad::value_of(taped.loss_sf), lsf) < 1e-10);
  }

  // gradient integrity: taped gradient vs central differences
  ad::Tape tape;
  std::vector<ad::Var> th(theta0.size());
  for (std::size_t i = 0; i < theta0.size(); ++i) th[i] = tape.leaf(theta0[i]);
  Rng dummy(0);
  auto loss = train::taped_batch_loss(tape, th, batch, bundle, ctrl, pot, kn, cfg, dummy);
  const auto grad = tape.gradient(loss.total, th);
  const auto fd = ad::finite_difference_parameter_gradient(loss_value, theta0, 1e-6);
  double scale = 0.0;
  for (double g : fd) scale = std::max(scale, std::abs(g));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    CHECK(std::abs(grad[i] - fd[i]) <= 1e-3 * std::max(1.0, scale));
  }
}

TEST_CASE("train: zero iterations returns the seeded initialization unchanged") {
  const auto bundle = dyn::make_system("gbm");
  train::TrainConfig cfg = train::default_train_config("gbm");
  cfg.iters = 0;
  cfg.seed = 5;
  auto result = train::train(bundle, cfg);
  CHECK(result.history.empty());

  Rng init = substream(5, 0x1717u);
  auto ctrl = nets::ControllerNet::random_init(cfg.nets.controller_widths, cfg.nets.activation,
                                               cfg.nets.mask, init);
  auto pot = nets::IcnnPotential::random_init(cfg.nets.icnn_widths, cfg.nets.epsilon,
                                              cfg.nets.floor_exponent, init, cfg.nets.srelu_knee);
  ctrl.normalize_in_place(50);
  CHECK(result.controller.params() == ctrl.params());
  CHECK(result.potential.params() == pot.params());
}

TEST_CASE("train: GBM toy loss decreases (median over 5 seeds)") {
  const auto bundle = dyn::make_system("gbm");
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    train::TrainConfig cfg = train::default_train_config("gbm");
    cfg.batch = 32;
    cfg.iters = 300;
    cfg.lr = 0.1;
    cfg.seed = seed;
    auto result = train::train(bundle, cfg);
    REQUIRE(result.history.size() == 300);
    if (result.history.back().total < result.history.front().total) ++improved;
  }
  CHECK(improved >= 3);
}

TEST_CASE("train: bitwise reproducible for a fixed seed") {
  const auto bundle = dyn::make_system("gbm");
  train::TrainConfig cfg = train::default_train_config("gbm");
  cfg.batch = 16;
  cfg.iters = 40;
  cfg.seed = 123;
  auto a = train::train(bundle, cfg);
  auto b = train::train(bundle, cfg);
  CHECK(a.controller.params() == b.controller.params());
  CHECK(a.potential.params() == b.potential.params());
  CHECK(a.classk.params() == b.classk.params());
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total == b.history[i].total);
  }
}

TEST_CASE("train: convexity clamp and spectral bound hold after every iteration") {
  const auto bundle = dyn::make_system("gbm");
  for (int iters : {1, 2, 3, 5, 8}) {
    train::TrainConfig cfg = train::default_train_config("gbm");
    cfg.batch = 16;
    cfg.iters = iters;
    cfg.seed = 7;
    auto result = train::train(bundle, cfg);
    CHECK(result.potential.convexity_weights_nonnegative());
    for (int l = 0; l < result.controller.layer_count(); ++l) {
      CHECK(result.controller.estimate_sigma(l, 10) <= 1.0 + 1e-3);
    }
  }
}

TEST_CASE("train: non-finite loss aborts with a diverged error") {
  const auto bundle = dyn::make_system("gbm");
  train::TrainConfig cfg = train::default_train_config("gbm");
  cfg.batch = 8;
  cfg.iters = 50;
  cfg.seed = 11;
  cfg.lr = 1e154;  // one astronomically large step drives the parameters to overflow
  CHECK_THROWS_AS((void)train::train(bundle, cfg), train::TrainingDiverged);
}

TEST_CASE("config validation") {
  train::TrainConfig cfg = train::default_train_config("bicycle");
  cfg.c = 0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = train::default_train_config("bicycle");
  cfg.lambda1 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = train::default_train_config("bicycle");
  cfg.batch = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
