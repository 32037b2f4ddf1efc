#include "riemobs/geodesic.hpp"

#include <cmath>
#include <limits>

#include "riemobs/errors.hpp"
#include "riemobs/tensor_calculus.hpp"

namespace riemobs {

namespace {

struct Shot {
  bool ok = false;
  Vec end;  // (gamma, u, length)
  std::shared_ptr<DenseSolution> sol;
};

class Shooter {
 public:
  Shooter(const MetricField& m, const GeodesicOptions& o) : metric_(m), opt_(o), n_(m.dim()) {}

  Shot run(const Vec& x, const Vec& v, double s0, double s1) const {
    Vec y(2 * n_ + 1);
    y << x, v, 0.0;
    auto rhs = [this](double, const Vec& z) {
      const int n = n_;
      Vec q = z.head(n), u = z.segment(n, n);
      const Mat p = metric_.eval(q);
      const Christoffel g = christoffel_from(p, metric_.partials(q));
      Vec out(2 * n + 1);
      out.head(n) = u;
      out.segment(n, n) = -contract(g, u, u);
      out(2 * n) = std::sqrt(std::max(0.0, u.dot(p * u)));
      return out;
    };
    auto dom = [this](const Vec& z) {
      return !opt_.domain || opt_.domain(Vec(z.head(n_)));
    };
    IntegratorSettings s;
    s.method = Integrator::fixed_rk4;
    s.fixed_step = 1.0 / opt_.steps;
    Shot out;
    try {
      out.sol = std::make_shared<DenseSolution>(solve_ode(rhs, s0, y, s1, s, dom));
      if (out.sol->status != OdeStatus::completed || !out.sol->states.back().allFinite())
        return out;
      out.end = out.sol->states.back();
      out.ok = true;
    } catch (const Error&) {
      out.ok = false;
    }
    return out;
  }

  int n() const { return n_; }

 private:
  const MetricField& metric_;
  const GeodesicOptions& opt_;
  int n_;
};

// Damped Newton with forward-difference Jacobian on a generic residual.
template <class Residual>
bool newton(Residual&& res, Vec& z, int max_iter, double tol, double& rnorm, int& iters) {
  Vec r;
  if (!res(z, r)) return false;
  rnorm = r.norm();
  for (iters = 0; iters < max_iter; ++iters) {
    if (rnorm <= tol) return true;
    const Eigen::Index m = z.size();
    Mat j(r.size(), m);
    for (Eigen::Index i = 0; i < m; ++i) {
      Vec zp = z;
      double e = 1e-7 * (1.0 + std::abs(z(i)));
      zp(i) += e;
      Vec rp;
      if (!res(zp, rp)) {
        zp(i) = z(i) - e;
        if (!res(zp, rp)) return false;
        e = -e;
      }
      j.col(i) = (rp - r) / e;
    }
    Eigen::FullPivLU<Mat> lu(j);
    if (lu.rank() < m) return false;
    Vec dz = -lu.solve(r);
    double alpha = 1.0;
    bool improved = false;
    for (int k = 0; k < 12; ++k, alpha *= 0.5) {
      Vec zt = z + alpha * dz;
      Vec rt;
      if (res(zt, rt) && rt.norm() < rnorm) {
        z = zt;
        r = rt;
        rnorm = rt.norm();
        improved = true;
        break;
      }
    }
    if (!improved) return false;
  }
  return rnorm <= tol;
}

TrajectorySegment to_segment(const Vec& xa, const std::vector<std::shared_ptr<DenseSolution>>& parts,
                             int n) {
  TrajectorySegment seg;
  seg.base_point = xa;
  auto merged = std::make_shared<DenseSolution>(*parts.front());
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto& p = *parts[k];
    merged->steps.insert(merged->steps.end(), p.steps.begin(), p.steps.end());
    merged->times.insert(merged->times.end(), p.times.begin() + 1, p.times.end());
    // the length coordinate restarts at zero on every segment; offset it
    const double off = merged->states.back()(2 * n);
    for (std::size_t i = 1; i < p.states.size(); ++i) {
      Vec s = p.states[i];
      s(2 * n) += off;
      merged->states.push_back(s);
    }
    for (std::size_t i = merged->steps.size() - p.steps.size(); i < merged->steps.size(); ++i)
      merged->steps[i].r1(2 * n) += off;
    merged->accepted += p.accepted;
    merged->span_end = p.span_end;
    merged->rhs_evals += p.rhs_evals;
  }
  seg.time_grid = merged->times;
  for (const auto& s : merged->states) seg.states.push_back(s.head(2 * n));
  seg.meta.accepted = merged->accepted;
  seg.meta.rhs_evals = merged->rhs_evals;
  seg.meta.method = Integrator::fixed_rk4;
  seg.meta.exit_time = 1.0;
  seg.dense = merged;
  return seg;
}

}  // namespace

GeodesicResult geodesic_shoot(const MetricField& metric, const Vec& xa, const Vec& xb, double tol) {
  GeodesicOptions o;
  o.tol = tol;
  return geodesic_shoot(metric, xa, xb, o);
}

GeodesicResult geodesic_shoot(const MetricField& metric, const Vec& xa, const Vec& xb,
                              const GeodesicOptions& opt) {
  const int n = metric.dim();
  if (xa.size() != n || xb.size() != n)
    throw Error(ErrorCode::DomainError, "endpoint dimension mismatch");
  if (opt.domain && (!opt.domain(xa) || !opt.domain(xb)))
    throw Error(ErrorCode::DomainExit, "geodesic endpoint outside domain");
  Shooter sh(metric, opt);
  GeodesicResult out;

  // single shooting on the initial velocity
  auto single = [&](const Vec& v, Vec& r) {
    Shot s = sh.run(xa, v, 0.0, 1.0);
    if (!s.ok) return false;
    r = s.end.head(n) - xb;
    return true;
  };
  Vec v = xb - xa;
  double rn = std::numeric_limits<double>::infinity();
  int it = 0;
  bool conv = newton(single, v, opt.max_newton, opt.tol, rn, it);
  if (conv || !opt.allow_fallback) {
    Shot s = sh.run(xa, v, 0.0, 1.0);
    if (s.ok) {
      out.path = to_segment(xa, {s.sol}, n);
      out.length = s.end(2 * n);
      out.shooting_residual = (s.end.head(n) - xb).norm();
    } else {
      out.shooting_residual = rn;
    }
    out.converged = conv && s.ok;
    out.iterations = it;
    return out;
  }

  // multiple shooting: unknowns v0, (x_k, v_k) for k = 1..M-1
  const int m = std::max(2, opt.segments);
  Vec z(n + (m - 1) * 2 * n);
  z.head(n) = xb - xa;
  for (int k = 1; k < m; ++k) {
    z.segment(n + (k - 1) * 2 * n, n) = xa + (double(k) / m) * (xb - xa);
    z.segment(n + (k - 1) * 2 * n + n, n) = xb - xa;
  }
  auto node = [&](const Vec& zz, int k, Vec& x, Vec& vv) {
    if (k == 0) {
      x = xa;
      vv = zz.head(n);
    } else {
      x = zz.segment(n + (k - 1) * 2 * n, n);
      vv = zz.segment(n + (k - 1) * 2 * n + n, n);
    }
  };
  auto multi = [&](const Vec& zz, Vec& r) {
    r.resize(zz.size());
    for (int k = 0; k < m; ++k) {
      Vec x, vv;
      node(zz, k, x, vv);
      Shot s = sh.run(x, vv, double(k) / m, double(k + 1) / m);
      if (!s.ok) return false;
      if (k + 1 < m) {
        Vec xn, vn;
        node(zz, k + 1, xn, vn);
        r.segment(k * 2 * n, n) = s.end.head(n) - xn;
        r.segment(k * 2 * n + n, n) = s.end.segment(n, n) - vn;
      } else {
        r.segment(k * 2 * n, n) = s.end.head(n) - xb;
      }
    }
    return true;
  };
  double rm = std::numeric_limits<double>::infinity();
  int itm = 0;
  bool convm = newton(multi, z, opt.max_newton, opt.tol, rm, itm);
  out.multiple_shooting = true;
  out.iterations = it + itm;
  std::vector<std::shared_ptr<DenseSolution>> parts;
  double len = 0.0;
  bool ok = true;
  Vec r;
  if (multi(z, r)) {
    for (int k = 0; k < m && ok; ++k) {
      Vec x, vv;
      node(z, k, x, vv);
      Shot s = sh.run(x, vv, double(k) / m, double(k + 1) / m);
      ok = s.ok;
      if (ok) {
        parts.push_back(s.sol);
        len += s.end(2 * n);
      }
    }
    out.shooting_residual = r.norm();
  } else {
    ok = false;
    out.shooting_residual = std::min(rn, rm);
  }
  if (ok) {
    out.path = to_segment(xa, parts, n);
    out.length = len;
  }
  out.converged = convm && ok;
  return out;
}

double path_length(const MetricField& metric, const TrajectorySegment& path) {
  const int n = metric.dim();
  double len = 0.0;
  auto speed = [&](const Vec& s) {
    Vec q = s.head(n), u = s.segment(n, n);
    return std::sqrt(std::max(0.0, u.dot(metric.eval(q) * u)));
  };
  for (std::size_t i = 1; i < path.states.size(); ++i)
    len += 0.5 * (path.time_grid[i] - path.time_grid[i - 1]) *
           (speed(path.states[i]) + speed(path.states[i - 1]));
  return len;
}

}  // namespace riemobs
