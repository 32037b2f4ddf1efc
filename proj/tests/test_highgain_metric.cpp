#include <doctest.h>

#include <cmath>
#include <random>

#include "riemobs/detectability.hpp"
#include "riemobs/errors.hpp"
#include "riemobs/highgain_metric.hpp"
#include "riemobs/system_model.hpp"
#include "riemobs/tensor_calculus.hpp"

using namespace riemobs;

namespace {

Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }

// hand-assembled residual of the gain inequality, independent of the library
Mat assembled(const Mat& p, const Vec& k, double q, double nu) {
  const int n = static_cast<int>(p.rows());
  Mat a = Mat::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) a(i, i + 1) = 1;
  a.col(0) -= k;
  Vec b = Vec::Zero(n);
  b(n - 1) = 1;
  Mat r = p * a + a.transpose() * p + 2 * q * Mat::Identity(n, n);
  if (std::isfinite(nu)) r += (p * b) * (p * b).transpose() / (q * nu * nu);
  return r;
}

}  // namespace

TEST_CASE("oscillator immersion of order 4") {
  const auto sys = harmonic_oscillator();
  const auto pts = oscillator_region().draw(50);
  const auto imm = build_immersion(sys, 4, pts);
  const Vec x = v3(1, 2, 3);
  const Vec h = imm.H(x);
  CHECK(h(0) == 1);
  CHECK(h(1) == 2);
  CHECK(h(2) == -3);
  CHECK(h(3) == -6);
  Mat want(4, 3);
  want << 1, 0, 0, 0, 1, 0, -3, 0, -1, 0, -3, -2;
  CHECK((imm.dH(x) - want).norm() < 1e-14);
  const Mat fd = fd_jacobian([&](const Vec& z) { return imm.H(z); }, x);
  CHECK((fd - want).norm() < 1e-8);
  CHECK(imm.h_lower > 0);
  CHECK(imm.h_upper >= imm.h_lower);
  CHECK(imm.nu == doctest::Approx(imm.nu_sampled / 2));
  for (const auto& p : pts) CHECK(structural_residual(imm, p).norm() < 1e-6);
  CHECK_THROWS_AS(build_immersion(lagrangian_toy(), 2, {Vec::Zero(2)}), Error);
}

TEST_CASE("linear immersion is the observability matrix") {
  Mat a(3, 3);
  a << 0, 1, 0, 0, 0, 1, -1, -2, -3;
  Mat c(1, 3);
  c << 1, 0.5, 0;
  const auto sys = linear_system(a, c);
  const auto imm = build_immersion(sys, 3, {v3(0, 0, 0), v3(1, 2, 3)});
  Mat obs(3, 3);
  obs << c, c * a, c * a * a;
  const Vec x = v3(0.3, -1, 2);
  CHECK((imm.H(x) - obs * x).norm() < 1e-14);
  Eigen::SelfAdjointEigenSolver<Mat> es(obs.transpose() * obs);
  CHECK(imm.h_lower == doctest::Approx(es.eigenvalues().minCoeff()).epsilon(1e-10));
  CHECK(imm.h_upper == doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-10));
  // unobservable pair
  Mat c2(1, 3);
  c2 << 0, 0, 1;
  Mat a2 = Mat::Zero(3, 3);
  CHECK_THROWS_AS(build_immersion(linear_system(a2, c2), 3, {x}), Error);
}

TEST_CASE("scalar gain inequality: closed form") {
  // order 1: A = 0, B = C = 1, K = g, P = 1/2 gives -g + 2q + 1/(4 q nu^2)
  for (double g : {0.5, 2.0, 10.0})
    for (double q : {0.1, 1.0})
      for (double nu : {0.5, 3.0}) {
        const Mat r = lmi_residual(Mat::Constant(1, 1, 0.5), Mat::Constant(1, 1, g), q, nu, 1, 1);
        CHECK(r(0, 0) == doctest::Approx(-g + 2 * q + 1 / (4 * q * nu * nu)).epsilon(1e-14));
      }
  // feasible iff g > min_q 2q + 1/(4 q nu^2) = sqrt(2)/nu at P = 1/2
  for (double nu : {0.1, 1.0, 20.0}) {
    const auto cert = solve_lmi(1, 1, nu);
    CHECK(cert.negative_definite);
    CHECK(cert.residual_max_eig <= 0);
    const double p = cert.p_nu(0, 0), g = cert.k_nu(0, 0), q = cert.q_margin;
    CHECK(-2 * p * g + 2 * q + p * p / (q * nu * nu) < 0);
    CHECK(p > 0);
  }
}

TEST_CASE("certificates for higher orders") {
  const auto c2 = solve_lmi(2, 1, 10.0);
  CHECK(c2.residual_max_eig <= 0);
  CHECK(c2.negative_definite);
  const Mat r = assembled(c2.p_nu, c2.k_nu.col(0), c2.q_margin, 10.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Mat>(r).eigenvalues().maxCoeff() <= 0);
  Eigen::LLT<Mat> llt(c2.p_nu);
  CHECK(llt.info() == Eigen::Success);

  const auto inf = solve_lmi(3, 1, std::numeric_limits<double>::infinity());
  CHECK(inf.negative_definite);
  const auto c4 = solve_lmi(4, 1, 0.005);
  CHECK(c4.negative_definite);
  CHECK(c4.residual_max_eig <= 0);
  CHECK(verify_certificate(c4).negative_definite);
  // two outputs: block structure
  const auto cm = solve_lmi(2, 2, 1.0);
  CHECK(cm.p_nu.rows() == 4);
  CHECK(cm.negative_definite);
  CHECK_THROWS_AS(solve_lmi(0, 1, 1.0), Error);
  CHECK_THROWS_AS(solve_lmi(2, 1, -1.0), Error);
}

TEST_CASE("immersion metric on the oscillator") {
  const auto sys = harmonic_oscillator();
  const auto imm = build_immersion(sys, 4, oscillator_region(1, 10, 0.1, 10, 1).draw(400));
  const auto cert = solve_lmi(4, 1, imm.nu);
  REQUIRE(cert.negative_definite);
  const auto metric = immersion_metric(imm, cert);
  CHECK(metric.has_analytic_partials());
  CHECK(decay_margin(imm, cert) > 0);

  const auto pts = oscillator_region(1, 10, 0.1, 10, 2).draw(100);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const double lo = Eigen::SelfAdjointEigenSolver<Mat>(cert.p_nu).eigenvalues().minCoeff();
  const double hi = Eigen::SelfAdjointEigenSolver<Mat>(cert.p_nu).eigenvalues().maxCoeff();
  for (const Vec& x : pts) {
    const Mat d = imm.dH(x);
    const Mat p = metric.eval(x);
    CHECK((p - d.transpose() * cert.p_nu * d).norm() <= 1e-14 * p.norm());
    // x1 row block of the parameterized form
    CHECK(p(0, 0) == doctest::Approx(cert.p_nu(0, 0) + 2 * cert.p_nu(0, 2) * -x(2) + cert.p_nu(2, 2) * x(2) * x(2)).epsilon(1e-12));
    // sandwich, on the sample set used for h bounds it is exact; here allow the sampled spread
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Mat>(p).eigenvalues();
    CHECK(ev.minCoeff() >= lo * Eigen::SelfAdjointEigenSolver<Mat>(d.transpose() * d).eigenvalues().minCoeff() * (1 - 1e-9));
    CHECK(ev.maxCoeff() <= hi * Eigen::SelfAdjointEigenSolver<Mat>(d.transpose() * d).eigenvalues().maxCoeff() * (1 + 1e-9));

    // two routes for the Lie derivative
    const Mat generic = lie_derivative(sys, metric, x);
    const Mat route = immersion_lie_derivative(imm, cert, x);
    CHECK((generic - route).norm() <= 1e-9 * std::max(1.0, route.norm()));

    // tangential decay with the explicit margin
    Vec v = v3(0, nd(rng), nd(rng));
    v.normalize();
    CHECK(v.dot(route * v) <= -decay_margin(imm, cert) * v.dot(p * v));
  }
  ImmersionData bigger = imm;
  bigger.nu = imm.nu / 10;
  CHECK_THROWS_AS(immersion_metric(bigger, cert), Error);
}

TEST_CASE("identity weight gives dH^T dH") {
  const auto sys = harmonic_oscillator();
  const auto pts = oscillator_region().draw(30);
  const auto imm = build_immersion(sys, 4, pts);
  LmiCertificate c;
  c.order = 4;
  c.out_dim = 1;
  c.p_nu = Mat::Identity(4, 4);
  c.k_nu = Mat::Zero(4, 1);
  c.nu = imm.nu;
  const auto m = immersion_metric(imm, c);
  for (const auto& x : pts) {
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Mat>(m.eval(x)).eigenvalues();
    CHECK(ev.minCoeff() >= imm.h_lower * (1 - 1e-12));
    CHECK(ev.maxCoeff() <= imm.h_upper * (1 + 1e-12));
  }
}
