#include <doctest.h>

#include <cmath>

#include "fessnc/autodiff.hpp"
#include "fessnc/nets.hpp"
#include "test_support.hpp"

using namespace fessnc;
using testutil::max_rel_err;
using testutil::rel_err;

namespace {

std::shared_ptr<const ad::Field> quadratic12() {
  // 1/2 (x1^2 + 2 x2^2), Hessian diag(1, 2)
  return ad::make_field(2, [](auto xs) { return 0.5 * (xs[0] * xs[0] + 2.0 * (xs[1] * xs[1])); });
}

}  // namespace

TEST_CASE("input_gradient on closed-form fields") {
  auto half_norm = ad::make_field(2, [](auto xs) { return 0.5 * (xs[0] * xs[0] + xs[1] * xs[1]); });
  std::vector<double> x{3.0, 4.0};
  auto g = ad::input_gradient(*half_norm, x);
  CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-14));

  auto constant = ad::make_field(3, [](auto) { return 7.0; });
  std::vector<double> y{1.0, 2.0, 3.0};
  auto gc = ad::input_gradient(*constant, y);
  CHECK(gc == std::vector<double>{0.0, 0.0, 0.0});

  CHECK_THROWS_AS((void)ad::input_gradient(*half_norm, y), std::invalid_argument);
}

TEST_CASE("input_gradient matches finite differences on an ICNN potential") {
  Rng rng(11);
  auto pot = nets::IcnnPotential::random_init({3, 8, 8, 1}, 1e-3, 2.0, rng);
  auto field = pot.as_field();
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = testutil::random_point(rng, 3);
    const auto exact = ad::input_gradient(*field, x);
    const auto fd = testutil::fd_gradient(*field, x);
    CHECK(max_rel_err(exact, fd) < 1e-5);
  }
}

TEST_CASE("hessian_vector_product: diagonal Hessian and FD oracle") {
  auto f = quadratic12();
  std::vector<double> x{0.7, -1.3};
  std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0};
  auto h1 = ad::hessian_vector_product(*f, x, e1);
  CHECK(h1[0] == doctest::Approx(1.0));
  CHECK(h1[1] == doctest::Approx(0.0));
  auto h2 = ad::hessian_vector_product(*f, x, e2);
  CHECK(h2[0] == doctest::Approx(0.0));
  CHECK(h2[1] == doctest::Approx(2.0));

  Rng rng(5);
  auto pot = nets::IcnnPotential::random_init({2, 6, 1}, 1e-3, 2.0, rng);
  auto field = pot.as_field();
  for (int rep = 0; rep < 20; ++rep) {
    const auto xp = testutil::random_point(rng, 2);
    const auto v = testutil::random_point(rng, 2, -1.0, 1.0);
    const auto exact = ad::hessian_vector_product(*field, xp, v);
    const auto fd = testutil::fd_hvp(*field, xp, v);
    CHECK(max_rel_err(exact, fd) < 1e-4);
  }
}

TEST_CASE("exact_generator_trace closed forms") {
  auto f = quadratic12();
  std::vector<double> x{0.2, 0.4};
  std::vector<double> identity{1.0, 0.0, 0.0, 1.0};
  CHECK(ad::exact_generator_trace(*f, x, identity, 2, 2) == doctest::Approx(3.0).epsilon(1e-14));

  std::vector<double> zero(4, 0.0);
  CHECK(ad::exact_generator_trace(*f, x, zero, 2, 2) == 0.0);

  std::vector<double> col{1.0, 0.0};  // g = (1, 0)^T, r = 1
  CHECK(ad::exact_generator_trace(*f, x, col, 2, 1) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS((void)ad::exact_generator_trace(*f, x, col, 1, 1), std::invalid_argument);
}

TEST_CASE("exact_generator_trace is the literal sum of column HVP contractions") {
  Rng rng(17);
  auto pot = nets::IcnnPotential::random_init({3, 6, 1}, 1e-3, 2.0, rng);
  auto field = pot.as_field();
  for (int rep = 0; rep < 10; ++rep) {
    const auto x = testutil::random_point(rng, 3);
    std::vector<double> g(6);
    for (auto& e : g) e = uniform(rng, -1.0, 1.0);
    double manual = 0.0;
    for (int j = 0; j < 2; ++j) {
      std::vector<double> col{g[static_cast<std::size_t>(0 * 2 + j)],
                              g[static_cast<std::size_t>(1 * 2 + j)],
                              g[static_cast<std::size_t>(2 * 2 + j)]};
      auto hv = ad::hessian_vector_product(*field, x, col);
      for (int i = 0; i < 3; ++i) manual += col[static_cast<std::size_t>(i)] * hv[static_cast<std::size_t>(i)];
    }
    const double traced = ad::exact_generator_trace(*field, x, g, 3, 2);
    CHECK(std::abs(traced - manual) < 1e-12);
  }
}

TEST_CASE("gradient report carries the point, gradient and optional trace") {
  auto f = quadratic12();
  std::vector<double> x{1.0, -2.0};
  auto rep = ad::grad_report(*f, x);
  CHECK(rep.point == x);
  CHECK(rep.gradient[0] == doctest::Approx(1.0));
  CHECK(rep.gradient[1] == doctest::Approx(-4.0));
  CHECK_FALSE(rep.has_hessian_trace);

  std::vector<double> identity{1.0, 0.0, 0.0, 1.0};
  auto with_trace = ad::grad_report(*f, x, identity, 2, 2);
  CHECK(with_trace.has_hessian_trace);
  CHECK(with_trace.hessian_trace == doctest::Approx(3.0));
}

TEST_CASE("parameter_gradient basics") {
  std::vector<double> theta{1.0, -2.0};
  auto grad = ad::parameter_gradient(
      [](ad::Tape&, std::span<const ad::Var> th) {
        ad::Var acc(0.0);
        for (const auto& t : th) acc += 0.5 * (t * t);
        return acc;
      },
      theta);
  CHECK(grad[0] == doctest::Approx(1.0));
  CHECK(grad[1] == doctest::Approx(-2.0));
}

TEST_CASE("parameter_gradient through a nested input derivative") {
  // loss(theta) = d/dx [theta_1 x^2] at x = 3  ==  6 theta_1, so d loss / d theta_1 = 6.
  std::vector<double> theta{0.8};
  auto grad = ad::parameter_gradient(
      [](ad::Tape&, std::span<const ad::Var> th) {
        ad::Dual<ad::Var> x(ad::Var(3.0), ad::Var(1.0));
        ad::Dual<ad::Var> y = ad::Dual<ad::Var>(th[0], ad::Var(0.0)) * x * x;
        return y.t;
      },
      theta);
  CHECK(grad[0] == doctest::Approx(6.0).epsilon(1e-13));
}

TEST_CASE("parameter_gradient propagates failures with context") {
  std::vector<double> theta{1.0};
  CHECK_THROWS_WITH_AS(
      (void)ad::parameter_gradient(
          [](ad::Tape&, std::span<const ad::Var>) -> ad::Var {
            throw std::runtime_error("inner boom");
          },
          theta),
      doctest::Contains("inner boom"), std::runtime_error);
}

TEST_CASE("stop_gradient severs derivative flow and preserves values") {
  // d/dx [x * sg(x)] at x = 3 -> 3 (second factor constant).
  ad::Tape tape;
  ad::Var x = tape.leaf(3.0);
  ad::Var y = x * ad::stop_gradient(x);
  tape.backward(y);
  CHECK(tape.adjoint(x) == doctest::Approx(3.0));

  // d/dx [sg(x^2)] -> 0; value component 9. Embed in x + sg(x^2) so the
  // output stays on the tape: the total derivative must be exactly 1.
  ad::Tape tape2;
  ad::Var x2 = tape2.leaf(3.0);
  ad::Var y2 = ad::stop_gradient(x2 * x2);
  CHECK(ad::value_of(y2) == doctest::Approx(9.0));
  ad::Var z2 = x2 + y2;
  tape2.backward(z2);
  CHECK(tape2.adjoint(x2) == doctest::Approx(1.0));

  // identity on values for duals too
  ad::Dual<double> d{2.5, 1.0};
  auto sg = ad::stop_gradient(d);
  CHECK(sg.v == 2.5);
  CHECK(sg.t == 0.0);
}

TEST_CASE("derivative of constant is 0 and of identity is 1") {
  ad::Tape tape;
  ad::Var x = tape.leaf(1.7);
  tape.backward(x);
  CHECK(tape.adjoint(x) == 1.0);

  auto fd = ad::finite_difference_gradient(*quadratic12(), std::vector<double>{1.0, 1.0});
  CHECK(fd[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(fd[1] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("arithmetic on tape scalars reproduces plain arithmetic") {
  Rng rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    const double a = uniform(rng, -3.0, 3.0), b = uniform(rng, 0.1, 3.0);
    ad::Tape tape;
    ad::Var va = tape.leaf(a), vb = tape.leaf(b);
    CHECK(ad::value_of(va * vb + va / vb - vb) == a * b + a / b - b);
    CHECK(ad::value_of(ad::exp(ad::sin(va))) == std::exp(std::sin(a)));
    CHECK(ad::value_of(ad::tanh(va) * ad::sqrt(vb)) == std::tanh(a) * std::sqrt(b));
  }
}

TEST_CASE("smoothed relu is C2 with exact knee values") {
  const double knee = 1.0;
  CHECK(ad::srelu(0.0, knee) == 0.0);
  CHECK(ad::srelu(-1.0, knee) == 0.0);
  CHECK(ad::srelu(2.0, knee) == doctest::Approx(1.5));
  CHECK(ad::srelu_grad(knee, knee) == doctest::Approx(1.0));
  CHECK(ad::srelu_grad2(knee - 1e-12, knee) == doctest::Approx(0.0).epsilon(1e-9));
  // convex: grad2 >= 0 across the ramp
  for (double z = -0.5; z < 1.5; z += 0.01) CHECK(ad::srelu_grad2(z, knee) >= 0.0);
}

TEST_CASE("second directional derivatives via Dual2 agree with HVP contractions") {
  Rng rng(31);
  auto pot = nets::IcnnPotential::random_init({3, 6, 1}, 1e-3, 2.0, rng);
  auto field = pot.as_field();
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = testutil::random_point(rng, 3);
    const auto v = testutil::random_point(rng, 3, -1.0, 1.0);
    std::vector<ad::Dual2<double>> xd(3);
    for (int i = 0; i < 3; ++i) {
      xd[static_cast<std::size_t>(i)] = {x[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(i)], 0.0};
    }
    const double dir2 = field->eval(std::span<const ad::Dual2<double>>(xd)).s;
    const auto hv = ad::hessian_vector_product(*field, x, v);
    double want = 0.0;
    for (int i = 0; i < 3; ++i) want += v[static_cast<std::size_t>(i)] * hv[static_cast<std::size_t>(i)];
    CHECK(rel_err(dir2, want) < 1e-10);
  }
}
