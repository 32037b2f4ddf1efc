#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles/oscillator.hpp"
#include "riemobs/errors.hpp"
#include "riemobs/system_model.hpp"
#include "riemobs/tensor_calculus.hpp"

using namespace riemobs;

namespace {

Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }
Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

std::vector<Vec> oscillator_points(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> x3(1.0, 10.0);
  std::vector<Vec> pts;
  while (static_cast<int>(pts.size()) < n) {
    Vec x = v3(3.2 * u(rng), 3.2 * u(rng), x3(rng));
    const double r2 = x(0) * x(0) + x(1) * x(1);
    if (r2 >= 0.1 && r2 <= 10.0) pts.push_back(x);
  }
  return pts;
}

}  // namespace

TEST_CASE("oscillator vector field and output") {
  const auto sys = harmonic_oscillator();
  CHECK(sys.state_dim() == 3);
  CHECK(sys.output_dim() == 1);
  const Vec f = sys.f(v3(1, 0, 4));
  CHECK(f(0) == 0.0);
  CHECK(f(1) == -4.0);
  CHECK(f(2) == 0.0);
  CHECK(sys.h(v3(3, 1, 2))(0) == 3.0);
  CHECK(sys.in_domain(v3(0, 0, 1)));
  CHECK_FALSE(sys.in_domain(v3(0, 0, -1)));
}

TEST_CASE("oscillator Lie output stack") {
  const auto sys = harmonic_oscillator();
  REQUIRE(sys.lie_order() >= 4);
  const Vec x = v3(1, 2, 3);
  const double want[] = {1, 2, -3, -6};
  for (int k = 0; k < 4; ++k) CHECK(sys.lie(k).value(x)(0) == doctest::Approx(want[k]));
  // next order, x3^2 x1
  CHECK(sys.lie(4).value(x)(0) == doctest::Approx(9.0));
  // L_f of each order is the next one
  for (int k = 0; k < 4; ++k) {
    const Vec lf = sys.lie(k).jacobian(x) * sys.f(x);
    CHECK(lf(0) == doctest::Approx(sys.lie(k + 1).value(x)(0)).epsilon(1e-12));
  }
}

TEST_CASE("lagrangian toy") {
  const auto sys = lagrangian_toy();
  const Vec f = sys.f(v2(0, 1));
  CHECK(f(0) == 1.0);
  CHECK(f(1) == 1.0);
  CHECK(sys.f(v2(3, 0)).norm() == 0.0);
  CHECK(sys.h(v2(2, -1))(0) == 2.0);
}

TEST_CASE("Jacobians agree with central differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<SystemModel> models = {harmonic_oscillator(), lagrangian_toy(),
                                     model_by_name("scalar_integrator", {{"n", 3}})};
  for (const auto& m : models) {
    for (int i = 0; i < 50; ++i) {
      Vec x(m.state_dim());
      for (int j = 0; j < x.size(); ++j) x(j) = u(rng);
      if (m.name() == "harmonic_oscillator") x(2) = 1.0 + std::abs(x(2)) * 4;
      const Mat df = m.df(x);
      const Mat fd = fd_jacobian([&](const Vec& z) { return m.f(z); }, x);
      CHECK((df - fd).norm() <= 1e-5 * (1 + df.norm()));
      const Mat dh = m.dh(x);
      const Mat fdh = fd_jacobian([&](const Vec& z) { return m.h(z); }, x);
      CHECK((dh - fdh).norm() <= 1e-5 * (1 + dh.norm()));
    }
  }
}

TEST_CASE("FD fallback when no Jacobian is supplied") {
  SystemDefinition d;
  d.name = "pendulum";
  d.n = 2;
  d.p = 1;
  d.f = [](const Vec& x) { return v2(x(1), -std::sin(x(0))); };
  d.h = [](const Vec& x) { return Vec::Constant(1, x(0)); };
  SystemModel m(d);
  CHECK_FALSE(m.has_analytic_df());
  const Mat df = m.df(v2(0.3, 0.1));
  CHECK(df(1, 0) == doctest::Approx(-std::cos(0.3)).epsilon(1e-8));
  CHECK(df(0, 1) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("integrate: zero field is constant") {
  const auto sys = model_by_name("scalar_integrator", {{"n", 2}});
  const auto seg = integrate(sys, v2(1, 2), 0.0, 5.0, 1e-10);
  for (const auto& s : seg.states) CHECK((s - v2(1, 2)).norm() == 0.0);
  CHECK((seg.at(2.7) - v2(1, 2)).norm() == 0.0);
}

TEST_CASE("integrate: half period forward and backward") {
  const auto sys = harmonic_oscillator();
  const double pi = std::acos(-1.0);
  // frequency 2: t = pi is a full period, t = pi/2 half of one
  auto fwd = integrate(sys, v3(1, 0, 4), 0.0, pi, 1e-10);
  CHECK((fwd.states.back() - v3(1, 0, 4)).norm() < 1e-7);
  CHECK((fwd.at(pi / 2) - v3(-1, 0, 4)).norm() < 1e-7);
  CHECK(fwd.time_grid.back() == doctest::Approx(pi));
  auto bwd = integrate(sys, v3(1, 0, 4), 0.0, -pi / 2, 1e-10);
  CHECK((bwd.at(-pi / 2) - v3(-1, 0, 4)).norm() < 1e-7);
  // time grid is stored increasing for backward runs too
  for (std::size_t i = 1; i < bwd.time_grid.size(); ++i) CHECK(bwd.time_grid[i] > bwd.time_grid[i - 1]);
  // dense output against the explicit solution
  for (double t : {0.1, 0.77, 1.9, 2.5}) {
    const oracle::V3 ref = oracle::oscillator_flow(oracle::V3(1, 0, 4), t);
    CHECK((fwd.at(t) - Vec(ref)).norm() < 1e-7);
  }
}

TEST_CASE("integrate: one-step residual and domain") {
  const auto sys = harmonic_oscillator();
  IntegratorSettings s;
  s.method = Integrator::fixed_rk4;
  s.fixed_step = 1e-2;
  auto seg = integrate(sys, v3(0.5, -1, 2), 0.0, 1.0, s);
  auto rhs = [&](double, const Vec& x) { return sys.f(x); };
  for (std::size_t i = 0; i + 1 < seg.states.size(); ++i) {
    const Vec next = rk4_step(rhs, seg.time_grid[i], seg.states[i], seg.time_grid[i + 1] - seg.time_grid[i]);
    CHECK((next - seg.states[i + 1]).norm() < 1e-13);
    CHECK(sys.in_domain(seg.states[i]));
  }
}

TEST_CASE("integrate: flow property and inversion") {
  const auto sys = harmonic_oscillator();
  for (const Vec& x0 : oscillator_points(10, 3)) {
    auto a = integrate(sys, x0, 0.0, 1.3, 1e-11);
    auto b = integrate(sys, a.states.back(), 1.3, 2.9, 1e-11);
    auto c = integrate(sys, x0, 0.0, 2.9, 1e-11);
    CHECK((b.states.back() - c.states.back()).norm() < 1e-6);
    CHECK((c.at(2.0) - b.at(2.0)).norm() < 1e-6);
    auto back = integrate(sys, c.states.back(), 2.9, 0.0, 1e-11);
    CHECK((back.at(0.0) - x0).norm() < 1e-6);
    CHECK((back.states.front() - x0).norm() < 1e-6);
  }
}

TEST_CASE("integrate: bad initial state and domain exit") {
  const auto sys = harmonic_oscillator();
  CHECK_THROWS_AS(integrate(sys, v3(1, 0, -1), 0.0, 1.0, 1e-8), Error);
  try {
    integrate(sys, v3(1, 0, -1), 0.0, 1.0, 1e-8);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainError);
  }
  // x3 drifts through zero: reported in the metadata, not thrown
  SystemDefinition d;
  d.name = "drift";
  d.n = 1;
  d.p = 1;
  d.f = [](const Vec&) { return Vec::Constant(1, -1.0); };
  d.h = [](const Vec& x) { return x; };
  d.domain = [](const Vec& x) { return x(0) > 0.0; };
  SystemModel m(d);
  auto seg = integrate(m, Vec::Constant(1, 1.0), 0.0, 3.0, 1e-8);
  CHECK(seg.meta.domain_exit);
  CHECK(seg.meta.exit_time <= 1.0);
  CHECK(seg.meta.exit_time > 0.9);
  for (const auto& s : seg.states) CHECK(s(0) > 0.0);
}

TEST_CASE("analytic oscillator metric: frozen entries at lambda 2") {
  const auto m = oscillator_analytic_metric(2.0);
  const Mat p = m.eval(v3(1, 0, 1));
  CHECK(p(0, 0) == doctest::Approx(0.375).epsilon(1e-14));
  CHECK(p(0, 1) == doctest::Approx(-0.125).epsilon(1e-14));
  CHECK(p(1, 1) == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(p(0, 2) == doctest::Approx(-0.03125).epsilon(1e-14));
  CHECK(p(1, 2) == doctest::Approx(0.0625).epsilon(1e-14));
  CHECK(p(2, 2) == doctest::Approx(0.0390625).epsilon(1e-14));
  CHECK_THROWS_AS(oscillator_analytic_metric(-1.0), Error);
  CHECK_THROWS_AS(m.eval(v3(1, 0, 0)), Error);
}

TEST_CASE("analytic oscillator metric: symmetric, positive, matches an independent Grammian") {
  for (double lam : {2.0, 8.0}) {
    const auto m = oscillator_analytic_metric(lam);
    for (const Vec& x : oscillator_points(6, 11)) {
      const Mat p = m.eval(x);
      CHECK((p - p.transpose()).norm() == 0.0);
      Eigen::LLT<Mat> llt(p);
      CHECK(llt.info() == Eigen::Success);
      const oracle::M3 g = oracle::weighted_grammian(oracle::V3(x), lam, 40.0 / lam, 40000);
      CHECK((p - Mat(g)).norm() / p.norm() < 1e-7);
    }
  }
}

TEST_CASE("analytic oscillator metric: Lie residual at 100 points") {
  const auto sys = harmonic_oscillator();
  const auto m = oscillator_analytic_metric(8.0);
  double worst = 0.0;
  for (const Vec& x : oscillator_points(100, 5)) {
    const Mat dh = sys.dh(x);
    const Mat res = lie_derivative(sys, m, x) - dh.transpose() * dh + 8.0 * m.eval(x);
    worst = std::max(worst, res.norm() / m.eval(x).norm());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("analytic metric partials agree with central differences") {
  const auto m = oscillator_analytic_metric(8.0);
  REQUIRE(m.has_analytic_partials());
  for (const Vec& x : oscillator_points(20, 9)) {
    const auto a = m.partials(x);
    const auto f = m.fd_partials(x);
    for (int i = 0; i < 3; ++i) CHECK((a[i] - f[i]).norm() < 1e-8 * (1 + a[i].norm()));
  }
}

TEST_CASE("weak oscillator metric") {
  const auto m = oscillator_weak_metric(1.0, 1.0);
  Mat want(3, 3);
  want << 3, -2, 0, -2, 2, 0, 0, 0, 1;
  CHECK((m.eval(v3(0, 0, 1)) - want).norm() == 0.0);
  for (double k : {0.5, 2.0})
    for (double l : {0.3, 1.0}) CHECK(oscillator_weak_metric(k, l).eval(v3(0, 5, 2))(0, 2) == 0.0);
  for (const Vec& x : oscillator_points(30, 4)) {
    const Mat p = m.eval(x);
    CHECK(p(0, 0) > 0);
    CHECK(p.topLeftCorner(2, 2).determinant() > 0);
    CHECK(p.determinant() > 0);
    CHECK((p - Mat(oracle::weak_metric(1, 1, oracle::V3(x)))).norm() < 1e-14);
  }
}

TEST_CASE("model lookup by name") {
  CHECK(model_by_name("harmonic_oscillator").state_dim() == 3);
  CHECK(model_by_name("lagrangian_toy").state_dim() == 2);
  CHECK(model_by_name("exp_metric_toy").state_dim() == 2);
  CHECK(model_by_name("scalar_integrator", {{"n", 4}}).state_dim() == 4);
  CHECK_THROWS_AS(model_by_name("nope"), Error);
}
