#include "riemobs/tensor_calculus.hpp"

#include <cmath>

#include "riemobs/errors.hpp"

namespace riemobs {

namespace {

Eigen::LLT<Mat> factor_metric(const Mat& p) {
  Eigen::LLT<Mat> llt(p);
  if (llt.info() != Eigen::Success || !p.allFinite())
    throw Error(ErrorCode::SingularMetric, "metric not positive definite");
  return llt;
}

}  // namespace

Mat lie_derivative_field(const VecField& f, const MatField& df, const MetricField& metric,
                         const Vec& x) {
  const Mat p = metric.eval(x);
  const Vec fx = f(x);
  const Mat a = df ? df(x) : fd_jacobian(f, x);
  const auto dp = metric.partials(x);
  Mat out = p * a + a.transpose() * p;
  for (int i = 0; i < metric.dim(); ++i) out += fx(i) * dp[i];
  return symmetrize(out);
}

Mat lie_derivative(const SystemModel& sys, const MetricField& metric, const Vec& x) {
  if (!sys.in_domain(x)) throw Error(ErrorCode::DomainError, "point outside domain");
  if (metric.dim() != sys.state_dim())
    throw Error(ErrorCode::Config, "metric and system dimensions differ");
  return lie_derivative_field([&](const Vec& z) { return sys.f(z); },
                              [&](const Vec& z) { return sys.df(z); }, metric, x);
}

double lie_derivative_flow_check(const SystemModel& sys, const MetricField& metric, const Vec& x,
                                 const Vec& v, double t_step) {
  if (!sys.in_domain(x)) throw Error(ErrorCode::DomainError, "point outside domain");
  IntegratorSettings s;
  s.rtol = 1e-13;
  s.atol = 1e-15;
  auto seg = integrate(sys, x, 0.0, t_step, s);
  if (seg.meta.domain_exit) throw Error(ErrorCode::DomainError, "flow left the domain");
  const Vec xt = seg.states.back();
  const Vec w = v + t_step * (sys.df(x) * v);
  return (w.dot(metric.eval(xt) * w) - v.dot(metric.eval(x) * v)) / t_step;
}

double lie_derivative_flow_limit(const SystemModel& sys, const MetricField& metric, const Vec& x,
                                 const Vec& v, double t_step) {
  const double q0 = lie_derivative_flow_check(sys, metric, x, v, t_step);
  const double q1 = lie_derivative_flow_check(sys, metric, x, v, 0.5 * t_step);
  const double q2 = lie_derivative_flow_check(sys, metric, x, v, 0.25 * t_step);
  const double r0 = 2 * q1 - q0, r1 = 2 * q2 - q1;
  return (4 * r1 - r0) / 3.0;
}

Christoffel christoffel_from(const Mat& p, const std::vector<Mat>& dp) {
  const int n = static_cast<int>(p.rows());
  auto llt = factor_metric(p);
  // first kind: c[k](i,j) = 1/2 (d_j P_ik + d_i P_jk - d_k P_ij)
  std::vector<Mat> first(n, Mat::Zero(n, n));
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        first[k](i, j) = 0.5 * (dp[j](i, k) + dp[i](j, k) - dp[k](i, j));
  Christoffel g(n, Mat::Zero(n, n));
  Vec rhs(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      for (int k = 0; k < n; ++k) rhs(k) = first[k](i, j);
      Vec sol = llt.solve(rhs);
      for (int l = 0; l < n; ++l) g[l](i, j) = g[l](j, i) = sol(l);
    }
  return g;
}

Christoffel christoffel(const MetricField& metric, const Vec& x) {
  return christoffel_from(metric.eval(x), metric.partials(x));
}

Vec contract(const Christoffel& g, const Vec& a, const Vec& b) {
  Vec out(static_cast<Eigen::Index>(g.size()));
  for (std::size_t l = 0; l < g.size(); ++l) out(l) = a.dot(g[l] * b);
  return out;
}

Vec riemannian_gradient(const MetricField& metric, const Vec& dh_row, const Vec& x) {
  return factor_metric(metric.eval(x)).solve(dh_row);
}

Mat riemannian_hessian(const MetricField& metric, const ScalarField& h, const Vec& x) {
  const Christoffel g = christoffel(metric, x);
  const Vec grad = h.gradient(x);
  Mat out = h.hessian(x);
  for (std::size_t l = 0; l < g.size(); ++l) out -= grad(l) * g[l];
  return symmetrize(out);
}

Mat diffeo_jacobian(const Diffeomorphism& phi, const Vec& x) {
  return phi.jacobian ? phi.jacobian(x) : fd_jacobian(phi.map, x);
}

MetricField pushforward_metric(const MetricField& metric, const Diffeomorphism& phi) {
  auto eval = [metric, phi](const Vec& z) {
    const Vec x = phi.inverse(z);
    const Mat j = diffeo_jacobian(phi, x);
    Eigen::FullPivLU<Mat> lu(j);
    if (!lu.isInvertible()) throw Error(ErrorCode::SingularJacobian, "coordinate change singular");
    const Mat jinv = lu.inverse();
    return Mat(jinv.transpose() * metric.eval(x) * jinv);
  };
  return MetricField(metric.dim(), metric.kind(), eval, {}, metric.label() + "_pushforward");
}

}  // namespace riemobs
