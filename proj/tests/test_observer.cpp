#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "riemobs/errors.hpp"
#include "riemobs/observer.hpp"
#include "riemobs/riccati_metric.hpp"
#include "riemobs/system_model.hpp"
#include "riemobs/tensor_calculus.hpp"

using namespace riemobs;

namespace {

Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }
Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec v1(double a) { return Vec::Constant(1, a); }

SystemModel scalar() { return model_by_name("scalar_integrator", {{"n", 1}}); }

ObserverSpec full(const MetricField& m, double k = 1.0) {
  ObserverSpec s;
  s.kind = ObserverKind::full_order;
  s.metric = m;
  s.gain_k = k;
  return s;
}

}  // namespace

TEST_CASE("mismatch function") {
  const auto d = OutputMismatch::squared_euclidean();
  CHECK(d.value(v2(1, 2), v2(0, 0)) == 5.0);
  const auto c = check_mismatch(d, {v1(0.3), v1(-2)});
  CHECK(c.ok);
  CHECK(c.min_hessian_eig == doctest::Approx(2.0));
  OutputMismatch bad;
  bad.value = [](const Vec& a, const Vec& b) { return (a - b).sum() + 1.0; };
  bad.grad_a = [](const Vec& a, const Vec&) { return Vec(Vec::Ones(a.size())); };
  CHECK_FALSE(check_mismatch(bad, {v1(0)}).ok);
}

TEST_CASE("full-order right-hand side") {
  const auto sys = harmonic_oscillator();
  const auto m = oscillator_analytic_metric(8.0);
  const Vec xh = v3(0.4, -0.2, 3);
  CHECK((full_order_rhs(full(m), sys, xh, sys.h(xh)) - sys.f(xh)).norm() == 0.0);

  const auto id = full(constant_metric(Mat::Identity(3, 3)));
  const Vec r = full_order_rhs(id, sys, xh, v1(1.0));
  const Vec want = sys.f(xh) - 2 * (xh(0) - 1.0) * v3(1, 0, 0);
  CHECK((r - want).norm() < 1e-15);

  const Vec x = v3(1, 0, 4);
  const Vec corr = full_order_rhs(full(m), sys, x, v1(1.1)) - sys.f(x);
  const Vec back = m.eval(x) * corr / (-2 * (x(0) - 1.1));
  CHECK((back - v3(1, 0, 0)).norm() < 1e-10);
  CHECK_THROWS_AS(full_order_rhs(full(m), sys, v3(1, 0, -1), v1(0)), Error);
}

TEST_CASE("splitting coordinates for the weak metric") {
  const auto sys = harmonic_oscillator();
  for (double k : {1.0, 0.5}) {
    for (double l : {1.0, 2.0}) {
      const auto m = oscillator_weak_metric(k, l);
      const auto phi = eisenhart_coordinates(sys, m, v3(0, 0, 1), identity_chart(3));
      std::mt19937_64 rng(1);
      std::uniform_real_distribution<double> u(-2, 2);
      for (int i = 0; i < 10; ++i) {
        const Vec x = v3(u(rng), u(rng), 3 + u(rng));
        const Vec z = phi.map(x);
        CHECK((z - v3(x(0), x(1) - k * x(0), x(2) + l * x(0) * x(0))).norm() < 1e-6);
        CHECK((phi.inverse(z) - x).norm() < 1e-6);
      }
      const auto pushed = pushforward_metric(m, phi);
      const Mat want = Vec(v3(1, 2 * l, 1)).asDiagonal();
      CHECK((pushed.eval(v3(0.7, -0.3, 2.5)) - want).norm() < 1e-6);
    }
  }
  // block-diagonal already: identity
  Mat d = Mat::Identity(3, 3);
  d(1, 1) = 3;
  const auto phi = eisenhart_coordinates(sys, constant_metric(d), v3(0, 0, 1), identity_chart(3));
  CHECK((phi.map(v3(1.5, -2, 4)) - v3(1.5, -2, 4)).norm() < 1e-12);
}

TEST_CASE("oscillator split dynamics") {
  const double k = 1.0, l = 1.0;
  const auto sp = oscillator_split(k, l);
  const Vec y = v1(0.7), xi = v2(0.2, 1.3);
  const Vec f = sp.f_xi(y, xi);
  CHECK(f(0) == doctest::Approx(-0.7 * (1.3 - l * 0.49) - k * (0.2 + k * 0.7)));
  CHECK(f(1) == doctest::Approx(2 * l * 0.7 * (0.2 + k * 0.7)));
  const Vec f0 = sp.f_xi(v1(0), xi);
  CHECK(f0(0) == doctest::Approx(-k * 0.2));
  CHECK(f0(1) == 0.0);
  CHECK((reduced_order_rhs(sp, y, xi) - f).norm() == 0.0);
  // agrees with the generic pull-back through the same coordinates
  const auto gen = split_from_coordinates(harmonic_oscillator(), sp.coords, 1, sp.p_xixi);
  CHECK((gen.f_xi(y, xi) - f).norm() < 1e-12);
  CHECK((gen.f_y(y, xi) - sp.f_y(y, xi)).norm() < 1e-12);
}

TEST_CASE("EKF right-hand side") {
  const MatField q1 = [](const Vec&) { return Mat(Mat::Identity(1, 1)); };
  auto d = ekf_rhs(scalar(), q1, v1(0.5), Mat::Identity(1, 1), v1(0.2));
  CHECK(d.pi_dot(0, 0) == doctest::Approx(0.0).scale(1));
  CHECK(d.xhat_dot(0) == doctest::Approx(-(0.5 - 0.2)));
  // LTI at the algebraic Riccati fixed point
  const double a = -0.7;
  const auto lin = linear_system(Mat::Constant(1, 1, a), Mat::Identity(1, 1));
  const double pi = -a + std::sqrt(a * a + 1);  // -2 a pi + 1 - pi^2 = 0
  auto s = ekf_rhs(lin, q1, v1(0.3), Mat::Constant(1, 1, pi), v1(0.3));
  CHECK(s.pi_dot(0, 0) == doctest::Approx(0.0).scale(1));
  CHECK(s.xhat_dot(0) == doctest::Approx(a * 0.3));
  CHECK_THROWS_AS(ekf_rhs(scalar(), q1, v1(0), Mat::Constant(1, 1, -1), v1(0)), Error);
}

TEST_CASE("Kleinman right-hand side") {
  CHECK(kleinman_rhs(scalar(), 1.0, v1(0.5), v1(0.1))(0) == doctest::Approx(-0.4));
  const auto sys = harmonic_oscillator();
  const Vec xh = v3(0.3, 0.2, 2);
  CHECK((kleinman_rhs(sys, 1.0, xh, sys.h(xh)) - sys.f(xh)).norm() == 0.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 2), x3(1.0, 10.0);
  for (int i = 0; i < 10; ++i) {
    const Vec x = v3(u(rng), u(rng), x3(rng));
    if (x.head(2).squaredNorm() < 0.1) continue;
    const Mat w = grammian(sys, x, 2 * std::acos(-1.0) / std::sqrt(x(2)), 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Mat>(w).eigenvalues().minCoeff() > 0);
  }
  Mat c(1, 2);
  c << 1, 0;
  CHECK_THROWS_AS(kleinman_rhs(linear_system(Mat::Zero(2, 2), c), 1.0, v2(0, 0), v1(1)), Error);
}

TEST_CASE("diagonal invariance for every observer kind") {
  const auto sys = harmonic_oscillator();
  const Vec x0 = v3(1, 0, 4);
  ObserverSpec f = full(oscillator_analytic_metric(8.0));
  ObserverSpec e;
  e.kind = ObserverKind::ekf;
  e.q_tensor = [](const Vec&) { return Mat(Mat::Identity(3, 3)); };
  ObserverSpec k;
  k.kind = ObserverKind::kleinman;
  ObserverSpec r;
  r.kind = ObserverKind::reduced_order;
  r.split = oscillator_split(1.0, 1.0);
  SimulationOptions opt;
  opt.integ.fixed_step = 1e-2;
  for (const auto& spec : {f, e, k, r}) {
    const double t_end = spec.kind == ObserverKind::kleinman ? 2.0 : 10.0;
    const auto tr = simulate(sys, spec, x0, x0, t_end, 0.5, false, opt);
    CHECK(tr.completed);
    double worst = 0;
    for (double v : tr.error_euclidean) worst = std::max(worst, v);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("full-order observer contracts in the metric") {
  const auto sys = harmonic_oscillator();
  const auto m = oscillator_analytic_metric(8.0);
  const auto tr = simulate(sys, full(m), v3(1, 0, 4), v3(1.05, 0.05, 3.95), 5.0, 0.1, true);
  REQUIRE(tr.completed);
  const double rate = fitted_rate(tr.times, tr.error_riemannian, 0.0, 5.0);
  CHECK(rate < 0);
  CHECK(tr.error_euclidean.back() < 1e-6);
  for (std::size_t i = 0; i < tr.times.size(); ++i) CHECK(std::abs(tr.error_euclidean[i] - (tr.observer_states[i] - tr.plant_states[i]).norm()) < 1e-15);
  // EKF from the same start also converges, along a different path
  ObserverSpec e;
  e.kind = ObserverKind::ekf;
  e.q_tensor = [](const Vec&) { return Mat(Mat::Identity(3, 3)); };
  e.metric = m;
  const auto te = simulate(sys, e, v3(1, 0, 4), v3(1.05, 0.05, 3.95), 30.0, 0.1, false);
  REQUIRE(te.completed);
  CHECK(te.error_euclidean.back() < 1e-3);
  double diff = 0;
  for (std::size_t i = 0; i < tr.times.size(); ++i) diff = std::max(diff, (te.observer_states[i] - tr.observer_states[i]).norm());
  CHECK(diff > 1e-3);
}

TEST_CASE("reduced-order observer is weakly contracting") {
  const auto sys = harmonic_oscillator();
  ObserverSpec r;
  r.kind = ObserverKind::reduced_order;
  r.split = oscillator_split(1.0, 1.0);
  for (const Vec& x0 : {v3(1, 0, 4), v3(-0.5, 1.5, 2)}) {
    const auto tr = simulate(sys, r, x0, Vec(v2(0.5, 2.0)), 50.0, 0.05, true);
    REQUIRE(tr.completed);
    for (std::size_t i = 1; i < tr.times.size(); ++i) CHECK(tr.error_riemannian[i] <= tr.error_riemannian[i - 1] + 1e-9);
    CHECK(std::abs(tr.observer_states.back()(1) - r.split->coords.map(tr.plant_states.back())(2)) < 1e-2);
  }
}

TEST_CASE("gain bookkeeping and events") {
  const auto sys = harmonic_oscillator();
  ObserverSpec s = full(oscillator_analytic_metric(8.0), 0.1);
  s.rho_bar = 1.0;
  s.delta2_lower = 1.0;
  const auto tr = simulate(sys, s, v3(1, 0, 4), v3(1, 0, 4), 1.0, 0.5, false);
  REQUIRE(!tr.events.empty());
  CHECK(tr.events[0].kind == "GainTooSmall");
  CHECK(tr.completed);
  // estimate pushed out of the domain: recorded, not thrown
  CHECK_THROWS_AS(simulate(sys, full(oscillator_analytic_metric(8.0)), v3(1, 0, 4), v3(1, 0, -1), 5.0, 0.5, false), Error);
  // metric lookup fails mid-run: recorded, not thrown
  const MetricField fenced(3, MetricKind::grid_backed, [](const Vec& x) -> Mat {
    if (x(0) > 1.2) throw Error(ErrorCode::GridOutOfRange, "below fence");
    return Mat::Identity(3, 3);
  });
  const auto bad = simulate(sys, full(fenced), v3(1, 0, 4), v3(1, 0, 4), 5.0, 0.5, false);
  CHECK(bad.events.empty());
  const auto left = simulate(sys, full(fenced), v3(2, 0, 4), v3(1, 0, 4), 5.0, 0.5, false);
  CHECK_FALSE(left.completed);
  REQUIRE_FALSE(left.events.empty());
  CHECK(left.events.back().kind == "GridOutOfRange");
  CHECK(left.events.back().detail == "below fence");
}

TEST_CASE("trace CSV layout") {
  const auto sys = harmonic_oscillator();
  const auto tr = simulate(sys, full(oscillator_analytic_metric(8.0)), v3(1, 0, 4), v3(1, 0.1, 4), 0.2, 0.1, false);
  std::ostringstream os;
  write_trace_csv(tr, os, {"hello"});
  const std::string s = os.str();
  CHECK(s.rfind("# hello\nt,x_1,x_2,x_3,xhat_1,xhat_2,xhat_3,y_1,err_euc,err_riem,riem_converged\n0,1,0,4,1,0.1,4,1,", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 5);
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("fitted rate") {
  std::vector<double> t, v;
  for (int i = 0; i <= 10; ++i) {
    t.push_back(0.5 * i);
    v.push_back(3 * std::exp(-2.0 * t.back()));
  }
  CHECK(fitted_rate(t, v, 0, 5) == doctest::Approx(-2.0));
  CHECK(std::isnan(fitted_rate(t, v, 10, 11)));
}
