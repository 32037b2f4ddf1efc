#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "oracles/oscillator.hpp"
#include "riemobs/errors.hpp"
#include "riemobs/metric_grid.hpp"
#include "riemobs/riccati_metric.hpp"
#include "riemobs/system_model.hpp"

using namespace riemobs;

namespace {

Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }

SystemModel scalar() { return model_by_name("scalar_integrator", {{"n", 1}}); }

RiccatiConfig lambda_cfg(double lam) {
  RiccatiConfig c;
  c.variant = RiccatiVariant::lambda_linear;
  c.lambda = lam;
  return c;
}

RiccatiConfig q_cfg(double q, int n, RiccatiVariant v = RiccatiVariant::riccati_q) {
  RiccatiConfig c;
  c.variant = v;
  c.q_tensor = [q, n](const Vec&) { return Mat(q * Mat::Identity(n, n)); };
  return c;
}

double rel(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff(); }

double entry_rel(const Mat& a, const Mat& b) {
  double w = 0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) w = std::max(w, std::abs(a(i, j) - b(i, j)) / std::max(std::abs(b(i, j)), 1e-300));
  return w;
}

}  // namespace

TEST_CASE("scalar fixed points") {
  const Vec x = Vec::Constant(1, 0.3);
  CHECK(compute_metric_at(scalar(), lambda_cfg(8.0), x)(0, 0) == doctest::Approx(0.125).epsilon(1e-6));
  CHECK(compute_metric_at(scalar(), q_cfg(1.0, 1), x)(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(compute_metric_radon(scalar(), q_cfg(1.0, 1), x)(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  // fixed horizons approach monotonically
  double prev = 0;
  for (double t : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    auto c = q_cfg(1.0, 1, RiccatiVariant::radon);
    c.horizon = t;
    const double p = compute_metric_at(scalar(), c, x)(0, 0);
    CHECK(p > prev);
    CHECK(p < 1.0);
    // closed form of pi' = 1 - pi^2 from p_lower
    const double p0 = 1e-3, th = std::tanh(t);
    CHECK(p == doctest::Approx((p0 + th) / (1 + p0 * th)).epsilon(1e-9));
    prev = p;
  }
  auto c0 = q_cfg(1.0, 1, RiccatiVariant::radon);
  c0.horizon = 0.0;
  CHECK(compute_metric_at(scalar(), c0, x)(0, 0) == 1e-3);
}

TEST_CASE("scalar Grammian") {
  const Vec x = Vec::Constant(1, -2.0);
  CHECK(grammian(scalar(), x, 1.0, 0.0)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(grammian_adaptive(scalar(), x, 8.0, 1e-9).p(0, 0) == doctest::Approx(0.125).epsilon(1e-8));
  for (double t : {0.1, 0.7, 3.0})
    CHECK(grammian(scalar(), x, t, 8.0)(0, 0) == doctest::Approx((1 - std::exp(-8 * t)) / 8).epsilon(1e-10));
}

TEST_CASE("oscillator: flow reproduces the closed form") {
  const auto sys = harmonic_oscillator();
  const auto cf = oscillator_analytic_metric(8.0);
  for (const Vec& x : {v3(1, 0, 4), v3(-0.5, 1.2, 2.0), v3(0.3, 0.3, 9.0)}) {
    const auto s = compute_metric_detailed(sys, lambda_cfg(8.0), x);
    CHECK(s.converged);
    CHECK(entry_rel(s.p, cf.eval(x)) < 1e-3);
    CHECK(rel(s.p, cf.eval(x)) < 1e-6);
    // insensitive to the starting level
    auto c10 = lambda_cfg(8.0);
    c10.p_lower_init = 1e-2;
    CHECK(rel(compute_metric_at(sys, c10, x), s.p) < 1e-6);
  }
}

TEST_CASE("oscillator: independent Grammian oracle at a fixed horizon") {
  const auto sys = harmonic_oscillator();
  const Vec x = v3(0.7, -0.4, 3.0);
  for (double t : {0.5, 2.0}) {
    const Mat lib = grammian(sys, x, t, 8.0);
    const Mat ref = oracle::weighted_grammian(oracle::V3(x), 8.0, t, 20000);
    CHECK(rel(lib, ref) < 1e-9);
  }
}

TEST_CASE("cross-oracles at matched points") {
  const auto sys = harmonic_oscillator();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.5, 1.5), x3(1.0, 10.0);
  for (int i = 0; i < 4; ++i) {
    const Vec x = v3(u(rng), u(rng), x3(rng));
    auto lin = lambda_cfg(8.0);
    lin.adaptive_tol = 1e-9;
    const Mat a = compute_metric_at(sys, lin, x);
    const Mat g = grammian_adaptive(sys, x, 8.0, 1e-9).p;
    CHECK(rel(a, g) < 1e-6);

    auto rq = q_cfg(0.05, 3);
    rq.horizon = 6.0;
    auto rr = rq;
    rr.variant = RiccatiVariant::radon;
    CHECK(rel(compute_metric_at(sys, rr, x), compute_metric_at(sys, rq, x)) < 1e-6);
  }
}

TEST_CASE("residual of a recomputed metric") {
  const auto sys = harmonic_oscillator();
  // horizon from the adaptive run, then frozen so neighbouring recomputations
  // used by the difference quotients share it
  auto check = [&](RiccatiConfig cfg, const Vec& x) {
    cfg.integ.rtol = 1e-12;
    cfg.integ.atol = 1e-15;
    const auto s = compute_metric_detailed(sys, cfg, x);
    REQUIRE(s.converged);
    cfg.horizon = s.horizon;
    const auto field = riccati_metric_field(sys, cfg);
    const double r = riccati_residual(sys, cfg, field, x);
    CHECK(r <= 10 * cfg.adaptive_tol * field.eval(x).norm());
  };
  for (const Vec& x : {v3(1, 0, 4), v3(-0.8, 0.5, 2)}) {
    check(lambda_cfg(8.0), x);
    check(q_cfg(1.0, 3), x);
  }
}

TEST_CASE("horizon doubling is monotone and capped") {
  const auto sys = harmonic_oscillator();
  const auto s = compute_metric_detailed(sys, lambda_cfg(8.0), v3(1, 0, 4));
  CHECK(s.doublings >= 1);
  CHECK(s.monotone);
  for (std::size_t i = 1; i < s.increments.size(); ++i) CHECK(s.increments[i] < s.increments[i - 1]);
  auto capped = lambda_cfg(8.0);
  capped.adaptive_tol = 1e-300;
  CHECK_THROWS_AS(compute_metric_at(sys, capped, v3(1, 0, 4)), Error);
}

TEST_CASE("validation and domain") {
  const auto sys = harmonic_oscillator();
  CHECK_THROWS_AS(compute_metric_at(sys, lambda_cfg(-1.0), v3(1, 0, 4)), Error);
  CHECK_THROWS_AS(compute_metric_at(sys, lambda_cfg(8.0), v3(1, 0, -4)), Error);
  RiccatiConfig noq;
  noq.variant = RiccatiVariant::riccati_q;
  CHECK_THROWS_AS(compute_metric_at(sys, noq, v3(1, 0, 4)), Error);
  CHECK(parse_variant("lambda") == RiccatiVariant::lambda_linear);
  CHECK(parse_variant("radon") == RiccatiVariant::radon);
  CHECK_THROWS_AS(parse_variant("bogus"), Error);
  // backward exits surface as errors
  SystemDefinition d;
  d.name = "drift";
  d.n = 1;
  d.p = 1;
  d.f = [](const Vec&) { return Vec::Constant(1, 1.0); };
  d.h = [](const Vec& x) { return x; };
  d.domain = [](const Vec& x) { return x(0) > 0.0; };
  auto c = lambda_cfg(1.0);
  c.horizon = 5.0;
  try {
    compute_metric_at(SystemModel(d), c, Vec::Constant(1, 1.0));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainExit);
  }
}

TEST_CASE("reconstructibility margin") {
  CHECK(reconstructibility_margin(scalar(), {Vec::Constant(1, 0.0), Vec::Constant(1, 5.0)}, 1.0) ==
        doctest::Approx(1.0));
  Mat c(1, 2);
  c << 1, 0;
  const auto part = linear_system(Mat::Zero(2, 2), c);
  CHECK(reconstructibility_margin(part, {Vec::Zero(2)}, 1.0) == doctest::Approx(0.0).scale(1));
  const auto sys = harmonic_oscillator();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-2, 2), x3(1.0, 10.0);
  std::vector<Vec> pts;
  while (pts.size() < 20) {
    Vec x = v3(u(rng), u(rng), x3(rng));
    if (x(0) * x(0) + x(1) * x(1) >= 0.1) pts.push_back(x);
  }
  double worst = 1e300;
  for (const auto& x : pts)
    worst = std::min(worst, reconstructibility_margin(sys, {x}, 2 * std::acos(-1.0) / std::sqrt(x(2))));
  CHECK(worst > 0.0);
}

TEST_CASE("grid: single node, positivity, determinism, round trip") {
  const auto sys = harmonic_oscillator();
  auto cfg = lambda_cfg(8.0);
  std::vector<GridAxis> one = {parse_axis("x1=1:1:1"), parse_axis("x2=0:0:1"), parse_axis("x3=4:4:1")};
  const auto g1 = build_grid(sys, cfg, one, GridParam::state);
  REQUIRE(g1.node_count() == 1);
  CHECK((g1.node_matrix(0) - compute_metric_at(sys, cfg, v3(1, 0, 4))).norm() == 0.0);

  cfg.integ.method = Integrator::fixed_rk4;
  cfg.integ.fixed_step = 1e-2;
  std::vector<GridAxis> axes = {parse_axis("theta=-3.141592653589793:3.141592653589793:36"),
                                parse_axis("omega=4:7:10")};
  const auto g = build_grid(sys, cfg, axes, GridParam::theta_omega, Interpolation::multilinear, 2);
  CHECK(g.failures.empty());
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    Eigen::LLT<Mat> llt(g.node_matrix(i));
    CHECK(llt.info() == Eigen::Success);
  }
  const auto [lo, hi] = g.eigen_bounds();
  CHECK(lo > 0);
  CHECK(std::isfinite(hi));
  const auto again = build_grid(sys, cfg, axes, GridParam::theta_omega, Interpolation::multilinear, 1);
  CHECK(again.to_text() == g.to_text());
  const auto back = MetricGrid::from_text(g.to_text());
  CHECK(back.to_text() == g.to_text());
  for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(back.values[i] == g.values[i]);

  CHECK_THROWS_AS(parse_axis("theta"), Error);
  CHECK_THROWS_AS(parse_axis("x=1:0:3"), Error);
  CHECK_THROWS_AS(MetricGrid::read_file("/nonexistent/grid.json"), Error);
}

TEST_CASE("scaled lookup") {
  const auto sys = harmonic_oscillator();
  auto cfg = lambda_cfg(8.0);
  std::vector<GridAxis> axes = {parse_axis("theta=-3.141592653589793:3.141592653589793:73"),
                                parse_axis("omega=3:9:25")};
  auto grid = build_grid(sys, cfg, axes, GridParam::theta_omega, Interpolation::nearest);
  // unit scaling at x3 = 1, r = 1: the stored node comes back
  const double w0 = grid.axes[1].node(8);
  std::size_t idx = 0;
  while (!(grid.unravel(idx)[0] == 36 && grid.unravel(idx)[1] == 8)) ++idx;  // theta = 0
  REQUIRE(std::abs(grid.node_coords(idx)(0)) < 1e-12);
  CHECK(rel(oscillator_scaled_lookup(grid, v3(1, 0, 1), w0), grid.node_matrix(idx)) < 1e-14);
  CHECK_THROWS_AS(oscillator_scaled_lookup(grid, v3(0, 0, 1), 8.0), Error);
  // multilinear lookup vs closed form
  grid.interpolation = Interpolation::multilinear;
  const auto cf = oscillator_analytic_metric(8.0);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.5, 1.5), x3(1.0, 7.0);
  for (int i = 0; i < 20; ++i) {
    const Vec x = v3(u(rng), u(rng), x3(rng));
    if (x.head(2).squaredNorm() < 0.1) continue;
    CHECK(rel(oscillator_scaled_lookup(grid, x, 8.0), cf.eval(x)) < 1e-2);
  }
  // exact scaling identity at every node, any lambda
  for (double lam : {5.0, 8.0}) {
    const Vec x = v3(0.8, -0.6, 2.5);
    const auto field = oscillator_grid_metric(grid, lam);
    CHECK(field.partials_approximate());
    CHECK(rel(field.eval(x), cf.eval(x) * 0 + oscillator_analytic_metric(lam).eval(x)) < 1e-2);
  }
}

TEST_CASE("state grid interpolation") {
  const auto sys = harmonic_oscillator();
  auto cfg = lambda_cfg(8.0);
  std::vector<GridAxis> axes = {parse_axis("x1=0.5:1.5:5"), parse_axis("x2=-0.5:0.5:5"), parse_axis("x3=3:5:5")};
  const auto g = build_grid(sys, cfg, axes, GridParam::state);
  const auto f = state_grid_metric(g);
  const Vec x = v3(1.0, 0.0, 4.0);
  CHECK(rel(f.eval(x), oscillator_analytic_metric(8.0).eval(x)) < 1e-9);
  CHECK(rel(f.eval(v3(0.9, 0.1, 3.7)), oscillator_analytic_metric(8.0).eval(v3(0.9, 0.1, 3.7))) < 2e-2);
  CHECK_THROWS_AS(f.eval(v3(3, 0, 4)), Error);
  CHECK_THROWS_AS(build_grid(sys, cfg, {parse_axis("a=0:1:2")}, GridParam::state), Error);
}
