#include "riemobs/ode.hpp"

#include <algorithm>
#include <cmath>

#include "riemobs/errors.hpp"

namespace riemobs {

namespace {

// Dormand-Prince 5(4)
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// b - bhat
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

double err_norm(const Vec& err, const Vec& y0, const Vec& y1, double rtol, double atol) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    double sc = atol + rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
    double r = err(i) / sc;
    s += r * r;
  }
  return std::sqrt(s / std::max<Eigen::Index>(1, err.size()));
}

double initial_step(const OdeRhs& f, double t0, const Vec& y0, const Vec& f0, double dir,
                    const IntegratorSettings& s) {
  Vec sc = (s.atol + s.rtol * y0.array().abs()).matrix();
  double dn0 = std::sqrt((y0.array() / sc.array()).square().mean());
  double dn1 = std::sqrt((f0.array() / sc.array()).square().mean());
  double h0 = (dn0 < 1e-5 || dn1 < 1e-5) ? 1e-6 : 0.01 * dn0 / dn1;
  Vec y1 = y0 + dir * h0 * f0;
  Vec f1 = f(t0 + dir * h0, y1);
  double dn2 = std::sqrt(((f1 - f0).array() / sc.array()).square().mean()) / h0;
  double h1 = (std::max(dn1, dn2) <= 1e-15) ? std::max(1e-6, h0 * 1e-3)
                                            : std::pow(0.01 / std::max(dn1, dn2), 0.2);
  return std::min({100 * h0, h1, s.max_step});
}

}  // namespace

Vec DenseSolution::at(double t) const {
  const double dir = (span_end >= span_begin) ? 1.0 : -1.0;
  const double span = std::abs(span_end - span_begin);
  const double slack = 1e-12 * std::max(1.0, span);
  double prog = (t - span_begin) * dir;
  const double reached = std::abs((times.empty() ? span_begin : times.back()) - span_begin);
  if (prog < -slack || prog > reached + slack)
    throw Error(ErrorCode::DomainError, "dense output queried outside integrated span");
  if (steps.empty()) return states.front();
  prog = std::clamp(prog, 0.0, reached);
  // steps are ordered along the direction of integration
  auto it = std::upper_bound(steps.begin(), steps.end(), prog, [&](double p, const Step& st) {
    return p < (st.t0 - span_begin) * dir;
  });
  const Step& st = (it == steps.begin()) ? steps.front() : *(it - 1);
  double th = std::clamp((t - st.t0) / st.h, 0.0, 1.0);
  double th1 = 1.0 - th;
  return st.r1 + th * (st.r2 + th1 * (st.r3 + th * (st.r4 + th1 * st.r5)));
}

Vec rk4_step(const OdeRhs& f, double t, const Vec& y, double h) {
  Vec k1 = f(t, y);
  Vec k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
  Vec k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
  Vec k4 = f(t + h, y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

std::vector<Vec> rk4_nodes(const OdeRhs& f, double t0, const Vec& y0, double t1, int n_steps) {
  std::vector<Vec> out;
  out.reserve(n_steps + 1);
  out.push_back(y0);
  const double h = (t1 - t0) / n_steps;
  Vec y = y0;
  for (int i = 0; i < n_steps; ++i) {
    y = rk4_step(f, t0 + i * h, y, h);
    out.push_back(y);
  }
  return out;
}

DenseSolution solve_ode(const OdeRhs& f, double t0, const Vec& y0, double t1,
                        const IntegratorSettings& s,
                        const std::function<bool(const Vec&)>& in_domain) {
  DenseSolution sol;
  sol.span_begin = t0;
  sol.span_end = t1;
  sol.times.push_back(t0);
  sol.states.push_back(y0);
  sol.exit_time = t0;
  if (t1 == t0) return sol;

  const double dir = (t1 > t0) ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  auto ok = [&](const Vec& y) { return y.allFinite() && (!in_domain || in_domain(y)); };

  double t = t0;
  Vec y = y0;
  Vec k1 = f(t, y);
  ++sol.rhs_evals;

  if (s.method == Integrator::fixed_rk4) {
    const auto n = static_cast<std::size_t>(std::ceil(span / s.fixed_step - 1e-9));
    const double h = dir * span / static_cast<double>(std::max<std::size_t>(n, 1));
    for (std::size_t i = 0; i < std::max<std::size_t>(n, 1); ++i) {
      Vec k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
      Vec k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
      Vec k4 = f(t + h, y + h * k3);
      Vec yn = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      double tn = (i + 1 == std::max<std::size_t>(n, 1)) ? t1 : t0 + (i + 1) * h;
      sol.rhs_evals += 3;
      if (!ok(yn)) {
        sol.status = OdeStatus::domain_exit;
        sol.exit_time = t;
        return sol;
      }
      Vec kn = f(tn, yn);
      ++sol.rhs_evals;
      DenseSolution::Step st{t, tn - t, y, yn - y, Vec(), Vec(), Vec::Zero(y.size())};
      st.r3 = st.h * k1 - st.r2;
      st.r4 = st.r2 - st.h * kn - st.r3;
      sol.steps.push_back(std::move(st));
      t = tn;
      y = yn;
      k1 = kn;
      sol.times.push_back(t);
      sol.states.push_back(y);
      ++sol.accepted;
    }
    sol.exit_time = t1;
    return sol;
  }

  double h = initial_step(f, t0, y0, k1, dir, s);
  const double hmin = 1e-14 * std::max(1.0, std::abs(t0) + span);
  while ((t1 - t) * dir > 0.0) {
    if (sol.accepted + sol.rejected >= s.max_steps) {
      sol.status = OdeStatus::step_failure;
      sol.exit_time = t;
      return sol;
    }
    bool last = false;
    if (h >= std::abs(t1 - t)) {
      h = std::abs(t1 - t);
      last = true;
    }
    const double hs = dir * h;
    Vec k2 = f(t + c2 * hs, y + hs * (a21 * k1));
    Vec k3 = f(t + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
    Vec k4 = f(t + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    Vec k5 = f(t + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Vec k6 = f(t + hs, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vec yn = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    double tn = last ? t1 : t + hs;
    Vec k7 = f(tn, yn);
    sol.rhs_evals += 6;
    Vec err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double en = yn.allFinite() ? err_norm(err, y, yn, s.rtol, s.atol)
                               : std::numeric_limits<double>::infinity();
    if (!std::isfinite(en)) en = 1e10;
    if (en <= 1.0) {
      if (!ok(yn)) {
        // shrink toward the boundary before declaring an exit
        if (h > hmin * 16) {
          h *= 0.25;
          ++sol.rejected;
          continue;
        }
        sol.status = OdeStatus::domain_exit;
        sol.exit_time = t;
        return sol;
      }
      DenseSolution::Step st{t, tn - t, y, yn - y, Vec(), Vec(), Vec()};
      st.r3 = st.h * k1 - st.r2;
      st.r4 = st.r2 - st.h * k7 - st.r3;
      st.r5 = st.h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      sol.steps.push_back(std::move(st));
      sol.max_error_estimate = std::max(sol.max_error_estimate, en);
      t = tn;
      y = yn;
      k1 = k7;
      sol.times.push_back(t);
      sol.states.push_back(y);
      ++sol.accepted;
      double fac = (en == 0.0) ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h = std::min(h * fac, s.max_step);
    } else {
      ++sol.rejected;
      h *= std::clamp(0.9 * std::pow(en, -0.2), 0.1, 0.9);
      if (h < hmin) {
        sol.status = OdeStatus::step_failure;
        sol.exit_time = t;
        return sol;
      }
    }
  }
  sol.exit_time = t1;
  return sol;
}

}  // namespace riemobs
