#include "riemobs/system_model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>

#include "riemobs/errors.hpp"

namespace riemobs {

SystemModel::SystemModel(SystemDefinition d)
    : d_(std::make_shared<const SystemDefinition>(std::move(d))) {
  if (d_->n <= 0 || d_->p <= 0) throw Error(ErrorCode::Config, "dimensions must be positive");
  if (!d_->f || !d_->h) throw Error(ErrorCode::Config, "f and h are required");
}

Vec SystemModel::f(const Vec& x) const { return d_->f(x); }
Vec SystemModel::h(const Vec& x) const { return d_->h(x); }

Mat SystemModel::df(const Vec& x) const {
  if (d_->df) return d_->df(x);
  return fd_jacobian(d_->f, x);
}

Mat SystemModel::dh(const Vec& x) const {
  if (d_->dh) return d_->dh(x);
  return fd_jacobian(d_->h, x);
}

std::vector<Mat> SystemModel::output_hessians(const Vec& x) const {
  if (d_->output_hessians) return d_->output_hessians(x);
  if (!d_->lie_outputs.empty() && d_->lie_outputs[0].hessians) return d_->lie_outputs[0].hessians(x);
  // differentiate rows of dh
  const int n = d_->n, p = d_->p;
  std::vector<Mat> out(p, Mat::Zero(n, n));
  for (int i = 0; i < n; ++i) {
    double s = std::cbrt(std::numeric_limits<double>::epsilon()) * (1.0 + std::abs(x(i)));
    Vec xp = x, xm = x;
    xp(i) += s;
    xm(i) -= s;
    Mat d = (dh(xp) - dh(xm)) / (xp(i) - xm(i));
    for (int k = 0; k < p; ++k) out[k].col(i) = d.row(k).transpose();
  }
  for (auto& m : out) m = symmetrize(m);
  return out;
}

bool SystemModel::in_domain(const Vec& x) const {
  if (x.size() != d_->n || !x.allFinite()) return false;
  return !d_->domain || d_->domain(x);
}

const LieOutput& SystemModel::lie(int k) const {
  if (k < 0 || k > lie_order())
    throw Error(ErrorCode::LieOutputsMissing,
                d_->name + " has no Lie output of order " + std::to_string(k));
  return d_->lie_outputs[k];
}

Mat fd_jacobian(const VecField& g, const Vec& x) {
  const double c = std::cbrt(std::numeric_limits<double>::epsilon());
  Vec g0 = g(x);
  Mat j(g0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double s = c * (1.0 + std::abs(x(i)));
    Vec xp = x, xm = x;
    xp(i) += s;
    xm(i) -= s;
    j.col(i) = (g(xp) - g(xm)) / (xp(i) - xm(i));
  }
  return j;
}

TrajectorySegment integrate(const SystemModel& sys, const Vec& x0, double t_start, double t_end,
                            double tol) {
  IntegratorSettings s;
  s.rtol = tol;
  s.atol = 1e-3 * tol;
  return integrate(sys, x0, t_start, t_end, s);
}

TrajectorySegment integrate(const SystemModel& sys, const Vec& x0, double t_start, double t_end,
                            const IntegratorSettings& s) {
  if (!sys.in_domain(x0)) throw Error(ErrorCode::DomainError, "initial state outside domain");
  auto rhs = [&sys](double, const Vec& x) { return sys.f(x); };
  auto dom = [&sys](const Vec& x) { return sys.in_domain(x); };
  auto sol = std::make_shared<DenseSolution>(solve_ode(rhs, t_start, x0, t_end, s, dom));
  if (sol->status == OdeStatus::step_failure)
    throw Error(ErrorCode::StepFailure, "integrator could not meet tolerance near t=" +
                                            std::to_string(sol->exit_time));
  TrajectorySegment seg;
  seg.base_point = x0;
  seg.meta.accepted = sol->accepted;
  seg.meta.rejected = sol->rejected;
  seg.meta.rhs_evals = sol->rhs_evals;
  seg.meta.max_error_estimate = sol->max_error_estimate;
  seg.meta.domain_exit = sol->status == OdeStatus::domain_exit;
  seg.meta.exit_time = sol->exit_time;
  seg.meta.method = s.method;
  seg.time_grid = sol->times;
  seg.states = sol->states;
  if (t_end < t_start) {
    std::reverse(seg.time_grid.begin(), seg.time_grid.end());
    std::reverse(seg.states.begin(), seg.states.end());
  }
  seg.dense = std::move(sol);
  return seg;
}

SystemModel harmonic_oscillator() {
  SystemDefinition d;
  d.name = "harmonic_oscillator";
  d.n = 3;
  d.p = 1;
  d.f = [](const Vec& x) { return Vec((Vec(3) << x(1), -x(2) * x(0), 0.0).finished()); };
  d.h = [](const Vec& x) { return Vec((Vec(1) << x(0)).finished()); };
  d.df = [](const Vec& x) {
    Mat a = Mat::Zero(3, 3);
    a(0, 1) = 1.0;
    a(1, 0) = -x(2);
    a(1, 2) = -x(0);
    return a;
  };
  d.dh = [](const Vec&) { return Mat((Mat(1, 3) << 1, 0, 0).finished()); };
  d.domain = [](const Vec& x) { return x(2) > 0.0; };

  auto zero_h = [](const Vec&) { return std::vector<Mat>(1, Mat::Zero(3, 3)); };
  auto row = [](double a, double b, double c) { return Mat((Mat(1, 3) << a, b, c).finished()); };
  auto sc = [](double v) { return Vec((Vec(1) << v).finished()); };
  auto cross = [](int i, int j, double v) {
    Mat m = Mat::Zero(3, 3);
    m(i, j) = v;
    m(j, i) = v;
    return m;
  };
  d.lie_outputs.push_back({[=](const Vec& x) { return sc(x(0)); },
                           [=](const Vec&) { return row(1, 0, 0); }, zero_h});
  d.lie_outputs.push_back({[=](const Vec& x) { return sc(x(1)); },
                           [=](const Vec&) { return row(0, 1, 0); }, zero_h});
  d.lie_outputs.push_back({[=](const Vec& x) { return sc(-x(2) * x(0)); },
                           [=](const Vec& x) { return row(-x(2), 0, -x(0)); },
                           [=](const Vec&) { return std::vector<Mat>{cross(0, 2, -1.0)}; }});
  d.lie_outputs.push_back({[=](const Vec& x) { return sc(-x(2) * x(1)); },
                           [=](const Vec& x) { return row(0, -x(2), -x(1)); },
                           [=](const Vec&) { return std::vector<Mat>{cross(1, 2, -1.0)}; }});
  d.lie_outputs.push_back({[=](const Vec& x) { return sc(x(2) * x(2) * x(0)); },
                           [=](const Vec& x) { return row(x(2) * x(2), 0, 2 * x(2) * x(0)); },
                           [=](const Vec& x) {
                             Mat m = cross(0, 2, 2 * x(2));
                             m(2, 2) = 2 * x(0);
                             return std::vector<Mat>{m};
                           }});
  d.output_hessians = zero_h;
  return SystemModel(std::move(d));
}

SystemModel lagrangian_toy() {
  SystemDefinition d;
  d.name = "lagrangian_toy";
  d.n = 2;
  d.p = 1;
  d.f = [](const Vec& x) { return Vec((Vec(2) << x(1), x(1) * x(1)).finished()); };
  d.h = [](const Vec& x) { return Vec((Vec(1) << x(0)).finished()); };
  d.df = [](const Vec& x) { return Mat((Mat(2, 2) << 0, 1, 0, 2 * x(1)).finished()); };
  d.dh = [](const Vec&) { return Mat((Mat(1, 2) << 1, 0).finished()); };
  d.output_hessians = [](const Vec&) { return std::vector<Mat>(1, Mat::Zero(2, 2)); };
  return SystemModel(std::move(d));
}

SystemModel linear_system(const Mat& a, const Mat& c, const std::string& name) {
  SystemDefinition d;
  d.name = name;
  d.n = static_cast<int>(a.rows());
  d.p = static_cast<int>(c.rows());
  d.f = [a](const Vec& x) { return Vec(a * x); };
  d.h = [c](const Vec& x) { return Vec(c * x); };
  d.df = [a](const Vec&) { return a; };
  d.dh = [c](const Vec&) { return c; };
  const int n = d.n, p = d.p;
  d.output_hessians = [n, p](const Vec&) { return std::vector<Mat>(p, Mat::Zero(n, n)); };
  // L_f^k h = C A^k x, enough orders for any immersion of length n + 1
  Mat ck = c;
  for (int k = 0; k <= n; ++k) {
    d.lie_outputs.push_back({[ck](const Vec& x) { return Vec(ck * x); },
                             [ck](const Vec&) { return ck; },
                             [n, p](const Vec&) { return std::vector<Mat>(p, Mat::Zero(n, n)); }});
    ck = ck * a;
  }
  return SystemModel(std::move(d));
}

namespace {

// closed form, templated so the partials can use a complex step
template <class T>
Eigen::Matrix<T, 3, 3> oscillator_metric_entries(double l, T x1, T x2, T x3) {
  const double l2 = l * l, l3 = l2 * l, l4 = l2 * l2;
  const T den = l2 + 4.0 * x3;
  const T den2 = den * den, den3 = den2 * den;
  Eigen::Matrix<T, 3, 3> p;
  p(0, 0) = (l2 + 2.0 * x3) / (l * den);
  p(0, 1) = -1.0 / den;
  p(1, 1) = 2.0 / (l * den);
  p(0, 2) = (-l3 * x1 + (l2 - 4.0 * x3) * x2) / (l2 * den2);
  p(1, 2) = ((3.0 * l2 + 4.0 * x3) * x1 - 4.0 * l * x2) / (l2 * den2);
  p(2, 2) = (6.0 * l4 + 12.0 * l2 * x3 + 16.0 * x3 * x3) / (l3 * den3) * x1 * x1 -
            4.0 * (5.0 * l2 + 4.0 * x3) / (l2 * den3) * x1 * x2 +
            4.0 * (5.0 * l2 + 4.0 * x3) / (l3 * den3) * x2 * x2;
  p(1, 0) = p(0, 1);
  p(2, 0) = p(0, 2);
  p(2, 1) = p(1, 2);
  return p;
}

std::string format_lambda(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

MetricField oscillator_analytic_metric(double lambda) {
  if (!(lambda > 0.0)) throw Error(ErrorCode::Config, "lambda must be positive");
  const double l = lambda;
  auto eval = [l](const Vec& x) {
    if (!(x(2) > 0.0)) throw Error(ErrorCode::DomainError, "analytic metric needs x3 > 0");
    return Mat(oscillator_metric_entries<double>(l, x(0), x(1), x(2)));
  };
  auto partials = [l](const Vec& x) {
    if (!(x(2) > 0.0)) throw Error(ErrorCode::DomainError, "analytic metric needs x3 > 0");
    using C = std::complex<double>;
    constexpr double h = 1e-30;
    std::vector<Mat> d(3);
    for (int k = 0; k < 3; ++k) {
      C z[3] = {x(0), x(1), x(2)};
      z[k] += C(0.0, h);
      d[k] = oscillator_metric_entries<C>(l, z[0], z[1], z[2]).imag() / h;
    }
    return d;
  };
  return MetricField(3, MetricKind::closed_form, eval, partials,
                     "oscillator_analytic(lambda=" + format_lambda(lambda) + ")");
}

MetricField oscillator_weak_metric(double k, double ell) {
  if (!(k > 0.0) || !(ell > 0.0)) throw Error(ErrorCode::Config, "k and ell must be positive");
  auto eval = [k, ell](const Vec& x) {
    const double x1 = x(0);
    Mat p(3, 3);
    p << 1 + 2 * ell * k * k + 4 * ell * ell * x1 * x1, -2 * ell * k, 2 * ell * x1,  //
        -2 * ell * k, 2 * ell, 0,                                                //
        2 * ell * x1, 0, 1;
    return p;
  };
  auto partials = [ell](const Vec& x) {
    std::vector<Mat> d(3, Mat::Zero(3, 3));
    d[0](0, 0) = 8 * ell * ell * x(0);
    d[0](0, 2) = d[0](2, 0) = 2 * ell;
    return d;
  };
  return MetricField(3, MetricKind::closed_form, eval, partials, "oscillator_weak");
}

SystemModel model_by_name(const std::string& name, const std::map<std::string, double>& params) {
  if (name == "harmonic_oscillator") return harmonic_oscillator();
  if (name == "lagrangian_toy" || name == "exp_metric_toy") return lagrangian_toy();
  if (name == "scalar_integrator") {
    auto it = params.find("n");
    int n = it == params.end() ? 1 : static_cast<int>(it->second);
    if (n < 1) throw Error(ErrorCode::Config, "n must be positive");
    Mat c = Mat::Zero(1, n);
    c(0, 0) = 1.0;
    return linear_system(Mat::Zero(n, n), c, "scalar_integrator");
  }
  throw Error(ErrorCode::Config, "unknown model '" + name + "'");
}

}  // namespace riemobs
