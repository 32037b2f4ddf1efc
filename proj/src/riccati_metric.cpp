#include "riemobs/riccati_metric.hpp"

#include <cmath>

#include "riemobs/errors.hpp"
#include "riemobs/tensor_calculus.hpp"

namespace riemobs {

namespace {

Vec vec_of(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }
Mat mat_of(const Vec& v, int r, int c) { return Eigen::Map<const Mat>(v.data(), r, c); }

Mat initial_pi(const RiccatiConfig& cfg, int n) {
  if (cfg.initial_pi.size() > 0) return cfg.initial_pi;
  return cfg.p_lower_init * Mat::Identity(n, n);
}

bool uses_q(RiccatiVariant v) {
  return v == RiccatiVariant::riccati_q || v == RiccatiVariant::radon;
}

void validate(const RiccatiConfig& cfg) {
  if (uses_q(cfg.variant)) {
    if (!cfg.q_tensor) throw Error(ErrorCode::Config, "Q tensor required for this variant");
  } else if (!(cfg.lambda > 0.0) && cfg.variant == RiccatiVariant::lambda_linear) {
    throw Error(ErrorCode::Config, "lambda must be positive");
  }
  if (!(cfg.p_lower_init > 0.0)) throw Error(ErrorCode::Config, "p_lower_init must be positive");
}

DenseSolution backward_flow(const SystemModel& sys, const Vec& x, double horizon,
                            const IntegratorSettings& s) {
  auto seg = integrate(sys, x, 0.0, -horizon, s);
  if (seg.meta.domain_exit)
    throw Error(ErrorCode::DomainExit, "backward trajectory left the domain at t=" +
                                           std::to_string(seg.meta.exit_time));
  return *seg.dense;
}

double q_scale(const RiccatiConfig& cfg, const Vec& x) {
  Mat q = cfg.q_tensor(x);
  double s = q.norm();
  if (!(s > 0.0)) throw Error(ErrorCode::Config, "Q must be positive definite");
  return s;
}

Mat solve_fixed(const SystemModel& sys, const RiccatiConfig& cfg, const Vec& x, double horizon) {
  const int n = sys.state_dim();
  Mat p0 = initial_pi(cfg, n);
  if (horizon == 0.0) return p0;
  const DenseSolution traj = backward_flow(sys, x, horizon, cfg.integ);
  const bool ric = cfg.variant == RiccatiVariant::riccati_q;
  auto rhs = [&](double t, const Vec& pv) {
    const Vec xt = traj.at(t);
    const Mat a = sys.df(xt), c = sys.dh(xt);
    const Mat p = mat_of(pv, n, n);
    if (!(p.norm() < cfg.blowup_guard))
      throw Error(ErrorCode::BlowUp, "Riccati solution exceeded the growth guard");
    Mat d = -p * a - a.transpose() * p + c.transpose() * c;
    if (ric)
      d -= p * cfg.q_tensor(xt) * p;
    else
      d -= cfg.lambda * p;
    return vec_of(symmetrize(d));
  };
  DenseSolution sol = solve_ode(rhs, -horizon, vec_of(p0), 0.0, cfg.integ);
  if (sol.status != OdeStatus::completed)
    throw Error(ErrorCode::StepFailure, "matrix ODE integration failed");
  Mat p = symmetrize(mat_of(sol.states.back(), n, n));
  if (!(p.norm() < cfg.blowup_guard)) throw Error(ErrorCode::BlowUp, "Riccati solution blew up");
  return p;
}

Mat radon_fixed(const SystemModel& sys, const RiccatiConfig& cfg, const Vec& x, double horizon) {
  const int n = sys.state_dim();
  Mat alpha = initial_pi(cfg, n);
  Mat beta = Mat::Identity(n, n);
  if (horizon == 0.0) return alpha;
  const DenseSolution traj = backward_flow(sys, x, horizon, cfg.integ);
  auto rhs = [&](double t, const Vec& ab) {
    const Vec xt = traj.at(t);
    const Mat a = sys.df(xt), c = sys.dh(xt);
    const Mat al = mat_of(ab.head(n * n), n, n), be = mat_of(ab.tail(n * n), n, n);
    Vec out(2 * n * n);
    out.head(n * n) = vec_of(-a.transpose() * al + c.transpose() * c * be);
    out.tail(n * n) = vec_of(cfg.q_tensor(xt) * al + a * be);
    return out;
  };
  // linear system solved chunk by chunk; (alpha, beta) <- (alpha beta^-1, I)
  // between chunks keeps beta well conditioned
  const int chunks = std::max(1, static_cast<int>(std::ceil(horizon / 1.0 - 1e-12)));
  for (int k = 0; k < chunks; ++k) {
    const double ta = -horizon + horizon * k / chunks;
    const double tb = (k + 1 == chunks) ? 0.0 : -horizon + horizon * (k + 1) / chunks;
    Vec ab(2 * n * n);
    ab << vec_of(alpha), vec_of(beta);
    DenseSolution sol = solve_ode(rhs, ta, ab, tb, cfg.integ);
    if (sol.status != OdeStatus::completed)
      throw Error(ErrorCode::StepFailure, "coupled linear system integration failed");
    alpha = mat_of(sol.states.back().head(n * n), n, n);
    beta = mat_of(sol.states.back().tail(n * n), n, n);
    Eigen::FullPivLU<Mat> lu(beta.transpose());
    if (!lu.isInvertible() || lu.rcond() < 1e-14)
      throw Error(ErrorCode::SingularBeta, "beta lost invertibility");
    alpha = lu.solve(alpha.transpose()).transpose();  // alpha beta^{-1}
    beta = Mat::Identity(n, n);
  }
  return symmetrize(alpha);
}

template <class Solve>
MetricSolve doubling(Solve&& solve, double t0, double cap, double tol) {
  MetricSolve out;
  double t = t0;
  Mat prev = solve(t);
  for (;;) {
    const double t2 = 2.0 * t;
    if (t2 > cap * (1 + 1e-12))
      throw Error(ErrorCode::NotConverged, "adaptive horizon exceeded cap T=" + std::to_string(cap));
    Mat p = solve(t2);
    ++out.doublings;
    const double inc = (p - prev).norm() / p.norm();
    if (!out.increments.empty() && inc > out.increments.back()) out.monotone = false;
    out.increments.push_back(inc);
    t = t2;
    prev = p;
    if (inc <= tol) {
      out.p = p;
      out.horizon = t;
      return out;
    }
  }
}

}  // namespace

const char* variant_name(RiccatiVariant v) {
  switch (v) {
    case RiccatiVariant::riccati_q: return "riccati_Q";
    case RiccatiVariant::lambda_linear: return "lambda_linear";
    case RiccatiVariant::radon: return "radon";
    case RiccatiVariant::grammian_finite_t: return "grammian_finite_T";
  }
  return "unknown";
}

RiccatiVariant parse_variant(const std::string& s) {
  if (s == "riccati" || s == "riccati_Q" || s == "riccati_q") return RiccatiVariant::riccati_q;
  if (s == "lambda" || s == "lambda_linear") return RiccatiVariant::lambda_linear;
  if (s == "radon") return RiccatiVariant::radon;
  if (s == "grammian" || s == "grammian_finite_T") return RiccatiVariant::grammian_finite_t;
  throw Error(ErrorCode::Config, "unknown variant '" + s + "'");
}

MetricSolve compute_metric_detailed(const SystemModel& sys, const RiccatiConfig& cfg,
                                    const Vec& x) {
  validate(cfg);
  if (!sys.in_domain(x)) throw Error(ErrorCode::DomainError, "point outside domain");
  std::function<Mat(double)> solve;
  switch (cfg.variant) {
    case RiccatiVariant::riccati_q:
    case RiccatiVariant::lambda_linear:
      solve = [&](double t) { return solve_fixed(sys, cfg, x, t); };
      break;
    case RiccatiVariant::radon:
      solve = [&](double t) { return radon_fixed(sys, cfg, x, t); };
      break;
    case RiccatiVariant::grammian_finite_t:
      solve = [&](double t) { return grammian(sys, x, t, cfg.lambda, cfg.integ); };
      break;
  }
  if (cfg.horizon) {
    if (*cfg.horizon < 0.0) throw Error(ErrorCode::Config, "horizon must be nonnegative");
    MetricSolve out;
    out.p = solve(*cfg.horizon);
    out.horizon = *cfg.horizon;
    return out;
  }
  double rate;
  if (uses_q(cfg.variant))
    rate = std::sqrt(q_scale(cfg, x));
  else if (cfg.lambda > 0.0)
    rate = cfg.lambda;
  else
    throw Error(ErrorCode::Config, "adaptive horizon needs lambda > 0");
  const double t0 = cfg.initial_horizon > 0 ? cfg.initial_horizon : 4.0 / rate;
  const double cap = cfg.horizon_cap > 0 ? cfg.horizon_cap : 200.0 / rate;
  return doubling(solve, t0, cap, cfg.adaptive_tol);
}

Mat compute_metric_at(const SystemModel& sys, const RiccatiConfig& cfg, const Vec& x) {
  return compute_metric_detailed(sys, cfg, x).p;
}

Mat compute_metric_radon(const SystemModel& sys, const RiccatiConfig& cfg, const Vec& x) {
  RiccatiConfig c = cfg;
  c.variant = RiccatiVariant::radon;
  return compute_metric_at(sys, c, x);
}

Mat grammian(const SystemModel& sys, const Vec& x, double horizon, double lambda,
             const IntegratorSettings& s) {
  const int n = sys.state_dim();
  if (!sys.in_domain(x)) throw Error(ErrorCode::DomainError, "point outside domain");
  if (horizon == 0.0) return Mat::Zero(n, n);
  // state (x, Phi, w) with w(t) = int_t^0 e^{lambda s} Phi^T C^T C Phi ds
  Vec y0(n + 2 * n * n);
  y0 << x, vec_of(Mat::Identity(n, n)), Vec::Zero(n * n);
  auto rhs = [&](double t, const Vec& y) {
    const Vec xt = y.head(n);
    const Mat phi = mat_of(y.segment(n, n * n), n, n);
    const Mat a = sys.df(xt), c = sys.dh(xt);
    const Mat cp = c * phi;
    Vec out(y.size());
    out.head(n) = sys.f(xt);
    out.segment(n, n * n) = vec_of(a * phi);
    out.tail(n * n) = vec_of(-std::exp(lambda * t) * (cp.transpose() * cp));
    return out;
  };
  auto dom = [&](const Vec& y) { return sys.in_domain(Vec(y.head(n))); };
  DenseSolution sol = solve_ode(rhs, 0.0, y0, -horizon, s, dom);
  if (sol.status == OdeStatus::domain_exit)
    throw Error(ErrorCode::DomainExit, "backward trajectory left the domain");
  if (sol.status != OdeStatus::completed)
    throw Error(ErrorCode::StepFailure, "Grammian integration failed");
  return symmetrize(mat_of(sol.states.back().tail(n * n), n, n));
}

MetricSolve grammian_adaptive(const SystemModel& sys, const Vec& x, double lambda, double tol,
                              const IntegratorSettings& s) {
  if (!(lambda > 0.0)) throw Error(ErrorCode::Config, "lambda must be positive");
  return doubling([&](double t) { return grammian(sys, x, t, lambda, s); }, 4.0 / lambda,
                  200.0 / lambda, tol);
}

double reconstructibility_margin(const SystemModel& sys, const std::vector<Vec>& samples,
                                 double tau) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& x : samples) m = std::min(m, min_eig(grammian(sys, x, tau, 0.0)));
  return std::max(0.0, m);
}

MetricField riccati_metric_field(const SystemModel& sys, const RiccatiConfig& cfg) {
  auto eval = [sys, cfg](const Vec& x) { return compute_metric_at(sys, cfg, x); };
  return MetricField(sys.state_dim(), MetricKind::closed_form, eval, {},
                     std::string("riccati_flow(") + variant_name(cfg.variant) + ")");
}

double riccati_residual(const SystemModel& sys, const RiccatiConfig& cfg, const MetricField& metric,
                        const Vec& x) {
  const Mat p = metric.eval(x);
  const Mat c = sys.dh(x);
  Mat r = lie_derivative(sys, metric, x) - c.transpose() * c;
  if (uses_q(cfg.variant))
    r += p * cfg.q_tensor(x) * p;
  else
    r += cfg.lambda * p;
  return r.norm();
}

}  // namespace riemobs
