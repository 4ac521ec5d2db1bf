#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "fessnc/dynamics.hpp"
#include "test_support.hpp"

using namespace fessnc;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent transcription of the double-pendulum equations for the
// double-transcription oracle: original coordinates with theta = shifted + pi.
std::vector<double> pendulum_reference_drift(const std::vector<double>& x) {
  const double m1 = 1.0, m2 = 1.0, l1 = 1.0, l2 = 1.0, g = 9.81;
  const double th1 = x[0] + kPi, z1 = x[1], th2 = x[2] + kPi, z2 = x[3];
  const double num1 = m2 * g * std::sin(th2) * std::cos(th1 - th2) -
                      m2 * std::sin(th1 - th2) * (l1 * z1 * z1 * std::cos(th1 - th2) + l2 * z2 * z2) -
                      (m1 + m2) * g * std::sin(th1);
  const double num2 =
      (m1 + m2) * (l1 * z1 * z1 * std::sin(th1 - th2) - g * std::sin(th2) +
                   g * std::sin(th1) * std::cos(th1 - th2)) +
      m2 * l2 * z2 * z2 * std::sin(th1 - th2) * std::cos(th1 - th2);
  const double denom = m1 + m2 * std::pow(std::sin(th1 - th2), 2);
  return {z1, num1 / (l1 * denom), z2, num2 / (l2 * denom)};
}

}  // namespace

TEST_CASE("gbm drift/diffusion") {
  auto m = dyn::make_gbm(-1.0, 1.0);
  std::vector<double> x{2.0};
  CHECK(m.drift_at(x)[0] == doctest::Approx(-2.0));
  CHECK(m.diffusion_at(x)(0, 0) == doctest::Approx(2.0));
  std::vector<double> zero{0.0};
  CHECK(m.drift_at(zero)[0] == 0.0);
  CHECK(m.diffusion_at(zero)(0, 0) == 0.0);
}

TEST_CASE("double pendulum: equilibrium, barrier, double-transcription oracle") {
  auto bundle = dyn::make_double_pendulum();
  std::vector<double> zero(4, 0.0);
  for (double f : bundle.model.drift_at(zero)) CHECK(f == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(bundle.model.diffusion_at(zero).norm() == 0.0);

  CHECK(bundle.safe.h(zero) == doctest::Approx(0.5));

  std::vector<double> state{0.1, 0.3, -0.2, 0.4};
  const auto got = bundle.model.drift_at(state);
  const auto want = pendulum_reference_drift(state);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(got[static_cast<std::size_t>(i)] - want[static_cast<std::size_t>(i)]) < 1e-12);
  }

  const auto g = bundle.model.diffusion_at(state);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(1, 0) == doctest::Approx(std::sin(0.1)));
  CHECK(g(2, 0) == 0.0);
  CHECK(g(3, 0) == doctest::Approx(std::sin(-0.2)));
}

TEST_CASE("bicycle: closed-form drift, diffusion, barrier") {
  auto bundle = dyn::make_bicycle();
  std::vector<double> zero(4, 0.0);
  for (double f : bundle.model.drift_at(zero)) CHECK(f == 0.0);
  CHECK(bundle.model.diffusion_at(zero).norm() == 0.0);

  std::vector<double> x{1.0, 0.0, 0.0, 2.0};
  const auto f = bundle.model.drift_at(x);
  CHECK(f[0] == doctest::Approx(2.0));
  CHECK(f[1] == doctest::Approx(0.0));
  CHECK(f[2] == doctest::Approx(2.0));
  CHECK(f[3] == doctest::Approx(1.0));

  std::vector<double> pt{1.0, 1.0, 0.3, -0.4};
  CHECK(bundle.safe.h(pt) == doctest::Approx(2.0));

  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const auto s = bundle.safe.sampler(rng);
    CHECK(std::hypot(s[0], s[1]) <= 3.0 + 1e-12);
    CHECK(std::abs(s[2]) <= 3.0);
    CHECK(std::abs(s[3]) <= 3.0);
  }
}

TEST_CASE("fhn variance network: jacobian blocks, laplacian, barrier") {
  dyn::FhnTopology topo;
  topo.n = 10;
  auto bundle = dyn::make_fhn_variance_network(topo);
  REQUIRE(bundle.model.d == 20);

  std::vector<double> zero(20, 0.0);
  for (double f : bundle.model.drift_at(zero)) CHECK(f == 0.0);
  CHECK(bundle.model.diffusion_at(zero).norm() == 0.0);

  // Jacobian block: rows ((1, -1), (0.1, -0.08)) acting on (v_i, w_i).
  std::vector<double> e(20, 0.0);
  e[4] = 1.0;  // v_2
  auto f = bundle.model.drift_at(e);
  CHECK(f[4] == doctest::Approx(1.0));
  CHECK(f[5] == doctest::Approx(0.1));
  std::fill(e.begin(), e.end(), 0.0);
  e[5] = 1.0;  // w_2
  f = bundle.model.drift_at(e);
  CHECK(f[4] == doctest::Approx(-1.0));
  CHECK(f[5] == doctest::Approx(-0.08));

  const Eigen::MatrixXd lap = dyn::watts_strogatz_laplacian(50, 4, 0.1, 1);
  for (int i = 0; i < 50; ++i) CHECK(std::abs(lap.row(i).sum()) < 1e-12);
  CHECK((lap - lap.transpose()).norm() == doctest::Approx(0.0));

  // barrier boundary: a component at 5 gives h = 0
  std::vector<double> at_boundary(20, 0.0);
  at_boundary[7] = 5.0;
  CHECK(bundle.safe.h(at_boundary) == doctest::Approx(0.0));

  // smooth barrier underestimates the hard one and has zero gradient at 0
  Rng prng(5);
  std::vector<double> pt = testutil::random_point(prng, 20, -4.0, 4.0);
  CHECK(bundle.safe.smooth_barrier->eval(std::span<const double>(pt)) <=
        bundle.safe.h(pt) + 1e-9);
  auto grad0 = ad::input_gradient(*bundle.safe.smooth_barrier, zero);
  for (double gi : grad0) CHECK(gi == doctest::Approx(0.0));

  CHECK_THROWS_AS((void)dyn::watts_strogatz_laplacian(10, 3, 0.1, 1), std::invalid_argument);
}

TEST_CASE("three link: unit tables, symmetry, positive definiteness, equilibrium") {
  auto bundle = dyn::make_three_link();
  std::vector<double> zero(6, 0.0);
  for (double f : bundle.model.drift_at(zero)) CHECK(f == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(bundle.model.diffusion_at(zero).norm() == 0.0);

  // M at x = 0 equals the a-table; a11 = 1 + 1 + 1*2 = 4 with unit parameters.
  std::vector<double> upright{0.0, 0.0, 0.0};
  const Eigen::Matrix3d m0 = dyn::three_link_mass_matrix(upright);
  CHECK(m0(0, 0) == doctest::Approx(4.0));
  CHECK(m0(1, 1) == doctest::Approx(3.0));
  CHECK(m0(2, 2) == doctest::Approx(2.0));
  CHECK(m0(0, 1) == doctest::Approx(2.0));
  CHECK(m0(0, 2) == doctest::Approx(1.0));
  CHECK(m0(1, 2) == doctest::Approx(1.0));

  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    const auto x = bundle.safe.sampler(rng);
    const Eigen::Matrix3d m = dyn::three_link_mass_matrix(std::span<const double>(x).subspan(0, 3));
    CHECK((m - m.transpose()).norm() < 1e-12);
  }

  // Cholesky succeeds at 1000 random states (positive definite mass matrix).
  for (int rep = 0; rep < 1000; ++rep) {
    const auto x = bundle.safe.sampler(rng);
    const Eigen::Matrix3d m = dyn::three_link_mass_matrix(std::span<const double>(x).subspan(0, 3));
    Eigen::LLT<Eigen::Matrix3d> llt(m);
    CHECK(llt.info() == Eigen::Success);
    CHECK_NOTHROW((void)bundle.model.drift_at(x));
  }
}

TEST_CASE("all shipped models vanish at the origin and have d x r diffusion") {
  Rng rng(11);
  for (const auto& name : dyn::system_names()) {
    dyn::SystemBundle bundle = dyn::make_system(
        name, name == "fhn" ? std::optional<dyn::FhnTopology>(dyn::FhnTopology{10, 4, 0.1, 1})
                            : std::nullopt);
    std::vector<double> zero(static_cast<std::size_t>(bundle.model.d), 0.0);
    for (double f : bundle.model.drift_at(zero)) CHECK(std::abs(f) < 1e-14);
    CHECK(bundle.model.diffusion_at(zero).norm() < 1e-14);

    for (int rep = 0; rep < 100; ++rep) {
      const auto x = bundle.safe.sampler(rng);
      const auto g = bundle.model.diffusion_at(x);
      CHECK(g.rows() == bundle.model.d);
      CHECK(g.cols() == bundle.model.r);
    }

    // The barrier keeps the origin in the interior.
    CHECK(bundle.safe.h(zero) > 0.0);
  }
  CHECK_THROWS_AS((void)dyn::make_system("nonsense"), std::invalid_argument);
}

TEST_CASE("pendulum samplers respect the appendix boxes") {
  Rng rng(13);
  auto dp = dyn::make_double_pendulum();
  for (int rep = 0; rep < 200; ++rep) {
    const auto x = dp.safe.sampler(rng);
    CHECK(x[0] >= -kPi / 6.0 - kPi);
    CHECK(x[0] <= 7.0 * kPi / 6.0 - kPi);
    for (int i = 1; i < 4; ++i) CHECK(std::abs(x[static_cast<std::size_t>(i)]) <= 5.0);
  }
}
