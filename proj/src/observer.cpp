#include "riemobs/observer.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

#include "riemobs/errors.hpp"
#include "riemobs/riccati_metric.hpp"

namespace riemobs {

const char* observer_kind_name(ObserverKind k) {
  switch (k) {
    case ObserverKind::full_order: return "full_order";
    case ObserverKind::reduced_order: return "reduced_order";
    case ObserverKind::ekf: return "ekf";
    case ObserverKind::kleinman: return "kleinman";
  }
  return "unknown";
}

ObserverKind parse_observer_kind(const std::string& s) {
  if (s == "full_order" || s == "full") return ObserverKind::full_order;
  if (s == "reduced_order" || s == "reduced") return ObserverKind::reduced_order;
  if (s == "ekf") return ObserverKind::ekf;
  if (s == "kleinman") return ObserverKind::kleinman;
  throw Error(ErrorCode::Config, "unknown observer kind '" + s + "'");
}

OutputMismatch OutputMismatch::squared_euclidean() {
  OutputMismatch d;
  d.value = [](const Vec& a, const Vec& b) { return (a - b).squaredNorm(); };
  d.grad_a = [](const Vec& a, const Vec& b) { return Vec(2.0 * (a - b)); };
  d.hess_aa = [](const Vec& a, const Vec&) { return Mat(2.0 * Mat::Identity(a.size(), a.size())); };
  return d;
}

MismatchCheck check_mismatch(const OutputMismatch& d, const std::vector<Vec>& ys) {
  MismatchCheck c;
  c.min_hessian_eig = std::numeric_limits<double>::infinity();
  for (const auto& y : ys) {
    c.max_diagonal_value = std::max(c.max_diagonal_value, std::abs(d.value(y, y)));
    Mat h;
    if (d.hess_aa) {
      h = d.hess_aa(y, y);
    } else {
      h = fd_jacobian([&](const Vec& a) { return d.grad_a(a, y); }, y);
    }
    c.min_hessian_eig = std::min(c.min_hessian_eig, min_eig(h));
  }
  c.ok = c.max_diagonal_value <= 1e-12 && c.min_hessian_eig > 0.0;
  return c;
}

SplitSystem oscillator_split(double k, double ell) {
  SplitSystem s;
  s.p = 1;
  s.r = 2;
  s.f_y = [k](const Vec& y, const Vec& xi) {
    return Vec((Vec(1) << xi(0) + k * y(0)).finished());
  };
  s.f_xi = [k, ell](const Vec& yv, const Vec& xi) {
    const double y = yv(0);
    return Vec((Vec(2) << -y * (xi(1) - ell * y * y) - k * (xi(0) + k * y),
                2 * ell * y * (xi(0) + k * y))
                   .finished());
  };
  s.df_xi = [k, ell](const Vec& yv, const Vec&) {
    const double y = yv(0);
    return Mat((Mat(2, 2) << -k, -y, 2 * ell * y, 0.0).finished());
  };
  s.p_xixi = [ell](const Vec&) {
    Mat p = Mat::Identity(2, 2);
    p(0, 0) = 2 * ell;
    return p;
  };
  s.coords.map = [k, ell](const Vec& x) {
    return Vec((Vec(3) << x(0), x(1) - k * x(0), x(2) + ell * x(0) * x(0)).finished());
  };
  s.coords.inverse = [k, ell](const Vec& z) {
    return Vec((Vec(3) << z(0), z(1) + k * z(0), z(2) - ell * z(0) * z(0)).finished());
  };
  s.coords.jacobian = [k, ell](const Vec& x) {
    Mat j = Mat::Identity(3, 3);
    j(1, 0) = -k;
    j(2, 0) = 2 * ell * x(0);
    return j;
  };
  return s;
}

SplitSystem split_from_coordinates(const SystemModel& sys, const Diffeomorphism& phi, int p,
                                   std::function<Mat(const Vec&)> p_xixi) {
  SplitSystem s;
  s.p = p;
  s.r = sys.state_dim() - p;
  s.coords = phi;
  s.p_xixi = std::move(p_xixi);
  auto full = [sys, phi, p](const Vec& y, const Vec& xi) {
    Vec z(y.size() + xi.size());
    z << y, xi;
    const Vec x = phi.inverse(z);
    return Vec(diffeo_jacobian(phi, x) * sys.f(x));
  };
  s.f_y = [full, p](const Vec& y, const Vec& xi) { return Vec(full(y, xi).head(p)); };
  s.f_xi = [full, p](const Vec& y, const Vec& xi) {
    Vec v = full(y, xi);
    return Vec(v.tail(v.size() - p));
  };
  s.domain = [sys](const Vec& x) { return sys.in_domain(x); };
  return s;
}

Vec full_order_rhs(const ObserverSpec& spec, const SystemModel& sys, const Vec& xhat,
                   const Vec& y) {
  if (!sys.in_domain(xhat)) throw Error(ErrorCode::DomainError, "estimate outside domain");
  const Vec yh = sys.h(xhat);
  const Vec dd = spec.delta.grad_a(yh, y);
  const Vec fx = sys.f(xhat);
  if (dd.isZero(0.0)) return fx;
  const Mat p = spec.metric.eval(xhat);
  Eigen::LLT<Mat> llt(p);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularMetric, "metric not positive definite");
  const Mat grad = llt.solve(sys.dh(xhat).transpose());  // n x p, columns grad_P h_j
  const double k = spec.gain_fn ? spec.gain_fn(xhat) : spec.gain_k;
  return fx - k * (grad * dd);
}

Vec reduced_order_rhs(const SplitSystem& split, const Vec& y, const Vec& xihat) {
  return split.f_xi(y, xihat);
}

EkfDerivative ekf_rhs(const SystemModel& sys, const MatField& q, const Vec& xhat, const Mat& pi,
                      const Vec& y) {
  Eigen::LLT<Mat> llt(symmetrize(pi));
  if (llt.info() != Eigen::Success || !pi.allFinite())
    throw Error(ErrorCode::SingularPi, "filter matrix lost positive definiteness");
  const Mat a = sys.df(xhat), c = sys.dh(xhat);
  EkfDerivative d;
  d.xhat_dot = sys.f(xhat) - llt.solve(c.transpose() * (sys.h(xhat) - y));
  d.pi_dot = symmetrize(-pi * a - a.transpose() * pi + c.transpose() * c - pi * q(xhat) * pi);
  return d;
}

Vec kleinman_rhs(const SystemModel& sys, double horizon, const Vec& xhat, const Vec& y,
                 const IntegratorSettings& s) {
  const Vec r = sys.h(xhat) - y;
  if (r.isZero(0.0)) return sys.f(xhat);
  const Mat w = grammian(sys, xhat, horizon, 0.0, s);
  Eigen::LLT<Mat> llt(w);
  if (llt.info() != Eigen::Success || min_eig(w) <= 1e-14 * w.norm())
    throw Error(ErrorCode::SingularGrammian, "Grammian singular at the estimate");
  return sys.f(xhat) - llt.solve(sys.dh(xhat).transpose() * r);
}

Diffeomorphism identity_chart(int n) {
  Diffeomorphism d;
  d.map = [](const Vec& x) { return x; };
  d.inverse = [](const Vec& x) { return x; };
  d.jacobian = [n](const Vec&) { return Mat(Mat::Identity(n, n)); };
  return d;
}

Diffeomorphism eisenhart_coordinates(const SystemModel& sys, const MetricField& metric,
                                     const Vec& x0, const Diffeomorphism& chart) {
  if (sys.output_dim() != 1) throw Error(ErrorCode::Config, "splitting construction needs p = 1");
  if (sys.dh(x0).norm() == 0.0) throw Error(ErrorCode::RankDeficient, "dh(x0) vanishes");
  const int n = sys.state_dim();
  const MetricField pbar = pushforward_metric(metric, chart);
  const double y0 = sys.h(x0)(0);
  IntegratorSettings s;
  s.rtol = 1e-12;
  s.atol = 1e-14;
  auto rhs = [pbar, n](double yy, const Vec& xi) {
    Vec z(n);
    z << yy, xi;
    const Mat p = pbar.eval(z);
    Eigen::LLT<Mat> llt(Mat(p.bottomRightCorner(n - 1, n - 1)));
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::SingularMetric, "xi block of the metric is not positive definite");
    return Vec(-llt.solve(Vec(p.bottomLeftCorner(n - 1, 1))));
  };
  auto flow = [rhs, s](double from, const Vec& xi, double to) {
    DenseSolution sol = solve_ode(rhs, from, xi, to, s);
    if (sol.status != OdeStatus::completed)
      throw Error(ErrorCode::IntegrationFailure, "splitting ODE failed");
    return Vec(sol.states.back());
  };
  Diffeomorphism out;
  out.map = [chart, flow, y0, n](const Vec& x) {
    const Vec c = chart.map(x);
    Vec z(n);
    z << c(0), flow(c(0), Vec(c.tail(n - 1)), y0);
    return z;
  };
  out.inverse = [chart, flow, y0, n](const Vec& z) {
    Vec c(n);
    c << z(0), flow(y0, Vec(z.tail(n - 1)), z(0));
    return Vec(chart.inverse(c));
  };
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

SimulationTrace simulate(const SystemModel& sys, const ObserverSpec& spec, const Vec& x0,
                         const Vec& xhat0, double t_end, double sample_dt,
                         bool with_riemannian_distance, const SimulationOptions& opt) {
  if (!(t_end > 0.0) || !(sample_dt > 0.0))
    throw Error(ErrorCode::Config, "t_end and sample_dt must be positive");
  if (!sys.in_domain(x0)) throw Error(ErrorCode::DomainError, "plant initial state outside domain");
  const int n = sys.state_dim(), p = sys.output_dim();
  SimulationTrace tr;
  tr.kind = spec.kind;
  tr.n = n;
  tr.p = p;

  const bool reduced = spec.kind == ObserverKind::reduced_order;
  const SplitSystem* split = nullptr;
  int r = 0;
  Vec z;
  if (reduced) {
    if (!spec.split) throw Error(ErrorCode::Config, "reduced-order observer needs split coordinates");
    split = &*spec.split;
    r = split->r;
    const Vec c = split->coords.map(x0);
    Vec xi_hat = xhat0.size() == r ? xhat0 : Vec(split->coords.map(xhat0).tail(r));
    z.resize(split->p + 2 * r);
    z << c, xi_hat;
    tr.obs_dim = r;
  } else {
    if (!sys.in_domain(xhat0))
      throw Error(ErrorCode::DomainError, "observer initial state outside domain");
    if (spec.kind == ObserverKind::full_order && !spec.metric.valid())
      throw Error(ErrorCode::Config, "full-order observer needs a metric");
    if (spec.kind == ObserverKind::ekf) {
      if (!spec.q_tensor) throw Error(ErrorCode::Config, "EKF needs a Q tensor");
      Mat pi0 = spec.pi0.size() ? spec.pi0
                : spec.metric.valid() ? spec.metric.eval(xhat0)
                                      : Mat(Mat::Identity(n, n));
      z.resize(2 * n + n * n);
      z << x0, xhat0, Eigen::Map<const Vec>(pi0.data(), n * n);
    } else {
      z.resize(2 * n);
      z << x0, xhat0;
    }
    tr.obs_dim = n;
  }

  if (spec.rho_bar && spec.delta2_lower) {
    const double need = *spec.rho_bar / (2.0 * *spec.delta2_lower);
    if (spec.gain_k < need)
      tr.events.push_back({0.0, "GainTooSmall",
                           "k=" + format_number(spec.gain_k) + " below " + format_number(need)});
  }

  auto rhs = [&](double, const Vec& s) -> Vec {
    Vec out(s.size());
    if (reduced) {
      const int py = split->p;
      const Vec y = s.head(py), xi = s.segment(py, r), xh = s.tail(r);
      out.head(py) = split->f_y(y, xi);
      out.segment(py, r) = split->f_xi(y, xi);
      out.tail(r) = reduced_order_rhs(*split, y, xh);
      return out;
    }
    const Vec x = s.head(n), xh = s.segment(n, n);
    const Vec y = sys.h(x);
    out.head(n) = sys.f(x);
    switch (spec.kind) {
      case ObserverKind::full_order: out.segment(n, n) = full_order_rhs(spec, sys, xh, y); break;
      case ObserverKind::kleinman:
        out.segment(n, n) = kleinman_rhs(sys, spec.kleinman_horizon, xh, y, spec.kleinman_integ);
        break;
      case ObserverKind::ekf: {
        const Mat pi = Eigen::Map<const Mat>(s.data() + 2 * n, n, n);
        if (!(pi.norm() < 1e12)) throw Error(ErrorCode::BlowUp, "filter matrix blew up");
        auto d = ekf_rhs(sys, spec.q_tensor, xh, pi, y);
        out.segment(n, n) = d.xhat_dot;
        out.tail(n * n) = Eigen::Map<const Vec>(d.pi_dot.data(), n * n);
        break;
      }
      default: break;
    }
    return out;
  };
  auto plant_of = [&](const Vec& s) -> Vec {
    if (reduced) return split->coords.inverse(Vec(s.head(split->p + r)));
    return s.head(n);
  };
  auto dom = [&](const Vec& s) {
    if (reduced) return sys.in_domain(plant_of(s));
    return sys.in_domain(Vec(s.head(n))) && sys.in_domain(Vec(s.segment(n, n)));
  };
  const MetricField dist_metric = opt.distance_metric.valid() ? opt.distance_metric : spec.metric;
  GeodesicOptions gopt = opt.geodesic;
  gopt.domain = [&sys](const Vec& x) { return sys.in_domain(x); };

  auto record = [&](double t, const Vec& s) {
    const Vec x = plant_of(s);
    tr.times.push_back(t);
    tr.plant_states.push_back(x);
    tr.outputs.push_back(sys.h(x));
    double riem = std::numeric_limits<double>::quiet_NaN();
    bool conv = false;
    if (reduced) {
      const Vec xi = s.segment(split->p, r), xh = s.tail(r);
      tr.observer_states.push_back(xh);
      tr.error_euclidean.push_back((xh - xi).norm());
      if (with_riemannian_distance && split->p_xixi) {
        const Vec e = xh - xi;
        riem = std::sqrt(std::max(0.0, e.dot(split->p_xixi(s.head(split->p)) * e)));
        conv = true;
      }
    } else {
      const Vec xh = s.segment(n, n);
      tr.observer_states.push_back(xh);
      tr.error_euclidean.push_back((xh - x).norm());
      if (with_riemannian_distance && dist_metric.valid()) {
        if ((xh - x).norm() == 0.0) {
          riem = 0.0;
          conv = true;
        } else {
          try {
            auto g = geodesic_shoot(dist_metric, xh, x, gopt);
            riem = g.length;
            conv = g.converged;
          } catch (const Error& e) {
            tr.events.push_back({t, "GeodesicFailure", e.what()});
          }
        }
      }
    }
    tr.error_riemannian.push_back(riem);
    tr.riem_converged.push_back(conv);
  };

  const auto ns = static_cast<long>(std::llround(t_end / sample_dt));
  record(0.0, z);
  for (long i = 0; i < ns; ++i) {
    const double ta = i * sample_dt;
    const double tb = (i + 1 == ns) ? t_end : (i + 1) * sample_dt;
    try {
      DenseSolution sol = solve_ode(rhs, ta, z, tb, opt.integ, dom);
      if (sol.status != OdeStatus::completed) {
        tr.events.push_back({sol.exit_time, sol.status == OdeStatus::domain_exit ? "DomainExit" : "StepFailure",
                             "integration stopped"});
        return tr;
      }
      z = sol.states.back();
    } catch (const Error& e) {
      tr.events.push_back({ta, error_name(e.code()), e.detail()});
      return tr;
    }
    record(tb, z);
  }
  tr.completed = true;
  return tr;
}

void write_trace_csv(const SimulationTrace& tr, std::ostream& os,
                     const std::vector<std::string>& comments) {
  for (const auto& c : comments) os << "# " << c << '\n';
  for (const auto& e : tr.events)
    os << "# event t=" << format_number(e.t) << ' ' << e.kind << ": " << e.detail << '\n';
  os << "t";
  for (int i = 1; i <= tr.n; ++i) os << ",x_" << i;
  const char* hat = tr.kind == ObserverKind::reduced_order ? ",xihat_" : ",xhat_";
  for (int i = 1; i <= tr.obs_dim; ++i) os << hat << i;
  for (int i = 1; i <= tr.p; ++i) os << ",y_" << i;
  os << ",err_euc,err_riem,riem_converged\n";
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    os << format_number(tr.times[k]);
    for (Eigen::Index i = 0; i < tr.plant_states[k].size(); ++i) os << ',' << format_number(tr.plant_states[k](i));
    for (Eigen::Index i = 0; i < tr.observer_states[k].size(); ++i)
      os << ',' << format_number(tr.observer_states[k](i));
    for (Eigen::Index i = 0; i < tr.outputs[k].size(); ++i) os << ',' << format_number(tr.outputs[k](i));
    os << ',' << format_number(tr.error_euclidean[k]) << ',' << format_number(tr.error_riemannian[k])
       << ',' << (tr.riem_converged[k] ? 1 : 0) << '\n';
  }
}

double fitted_rate(const std::vector<double>& times, const std::vector<double>& values, double t0,
                   double t1) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t0 || times[i] > t1 || !(values[i] > 0.0)) continue;
    const double ly = std::log(values[i]);
    sx += times[i];
    sy += ly;
    sxx += times[i] * times[i];
    sxy += times[i] * ly;
    ++m;
  }
  if (m < 2) return std::numeric_limits<double>::quiet_NaN();
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace riemobs
