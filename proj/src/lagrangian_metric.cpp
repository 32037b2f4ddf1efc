#include "riemobs/lagrangian_metric.hpp"

#include <cmath>

#include "riemobs/errors.hpp"

namespace riemobs {

namespace {

// (Gv)(b, j) = Gamma^b_{aj} v_a
Mat gamma_v(const Christoffel& g, const Vec& v) {
  const int n = static_cast<int>(g.size());
  Mat m(n, n);
  for (int b = 0; b < n; ++b) m.row(b) = v.transpose() * g[b];
  return m;
}

}  // namespace

Christoffel LagrangianSystem::gamma(const Vec& q) const {
  if (christoffel_override) return christoffel_override(q);
  return christoffel(g, q);
}

Vec LagrangianSystem::source_at(const Vec& q, double t) const {
  if (!source) return Vec::Zero(config_dim);
  return source(q, t);
}

void validate_weights(const SasakiWeights& w) {
  if (!(w.a > 0.0 && w.b > 0.0 && w.c > 0.0))
    throw Error(ErrorCode::WeightsInvalid, "weights a, b, c must be positive");
  if (!(w.c * w.c < w.a * w.b)) throw Error(ErrorCode::WeightsInvalid, "need c^2 < a b");
}

Vec euler_lagrange_rhs(const LagrangianSystem& lag, double t, const Vec& x) {
  const int n = lag.config_dim;
  const Vec q = x.head(n), v = x.tail(n);
  Vec out(2 * n);
  out.head(n) = v;
  out.tail(n) = -contract(lag.gamma(q), v, v) + lag.source_at(q, t);
  return out;
}

SystemModel euler_lagrange_dynamics(const LagrangianSystem& lag) {
  const int n = lag.config_dim;
  if (n <= 0 || lag.g.dim() != n) throw Error(ErrorCode::Config, "configuration metric size mismatch");
  SystemDefinition d;
  d.name = lag.name;
  d.n = 2 * n;
  d.p = n;
  d.f = [lag](const Vec& x) { return euler_lagrange_rhs(lag, 0.0, x); };
  d.h = [n](const Vec& x) { return Vec(x.head(n)); };
  d.dh = [n](const Vec&) {
    Mat c = Mat::Zero(n, 2 * n);
    c.leftCols(n) = Mat::Identity(n, n);
    return c;
  };
  d.df = [lag, n](const Vec& x) {
    const Vec q = x.head(n), v = x.tail(n);
    Mat a = Mat::Zero(2 * n, 2 * n);
    a.topRightCorner(n, n) = Mat::Identity(n, n);
    // velocity block is exact: d/dv (-Gamma(v, v)) = -2 Gv
    a.bottomRightCorner(n, n) = -2.0 * gamma_v(lag.gamma(q), v);
    auto fv = [&](const Vec& qq) {
      return Vec(-contract(lag.gamma(qq), v, v) + lag.source_at(qq, 0.0));
    };
    a.bottomLeftCorner(n, n) = fd_jacobian(fv, q);
    return a;
  };
  d.output_hessians = [n](const Vec&) { return std::vector<Mat>(n, Mat::Zero(2 * n, 2 * n)); };
  return SystemModel(std::move(d));
}

MetricField sasaki_metric(const LagrangianSystem& lag) {
  validate_weights(lag.weights);
  const int n = lag.config_dim;
  auto eval = [lag, n](const Vec& x) {
    const Vec q = x.head(n), v = x.tail(n);
    const auto& w = lag.weights;
    const Mat g = lag.g.eval(q);
    const Mat gv = gamma_v(lag.gamma(q), v);
    Mat p(2 * n, 2 * n);
    p.topLeftCorner(n, n) =
        w.a * g - w.c * (g * gv + gv.transpose() * g) + w.b * gv.transpose() * g * gv;
    p.topRightCorner(n, n) = -w.c * g + w.b * gv.transpose() * g;
    p.bottomLeftCorner(n, n) = p.topRightCorner(n, n).transpose();
    p.bottomRightCorner(n, n) = w.b * g;
    return p;
  };
  return MetricField(2 * n, MetricKind::sasaki, eval, {}, "sasaki(" + lag.name + ")");
}

double sasaki_quadratic_form(const LagrangianSystem& lag, const Vec& q, const Vec& v,
                             const Vec& eta, const Vec& omega) {
  const auto& w = lag.weights;
  const Mat g = lag.g.eval(q);
  const Vec z = omega + gamma_v(lag.gamma(q), v) * eta;
  return w.a * eta.dot(g * eta) + w.b * z.dot(g * z) - 2.0 * w.c * eta.dot(g * z);
}

Mat tangential_block(const LagrangianSystem& lag, const Vec& x) {
  const int n = lag.config_dim;
  const Vec q = x.head(n), v = x.tail(n);
  const Mat p = sasaki_metric(lag).eval(x);
  const Mat pvq = p.bottomLeftCorner(n, n), pvv = p.bottomRightCorner(n, n);
  const Mat dfv = -2.0 * gamma_v(lag.gamma(q), v);  // source has no v-dependence
  Mat t = pvq + pvv * dfv;
  Mat out = t + t.transpose();
  const auto dg = lag.g.partials(q);
  for (int i = 0; i < n; ++i) out += lag.weights.b * dg[i] * v(i);
  // P_vv = b g(q) does not depend on v, so the f_v transport term vanishes
  return symmetrize(out);
}

TangentialReport verify_tangential_identity(const LagrangianSystem& lag,
                                            const std::vector<Vec>& samples) {
  validate_weights(lag.weights);
  TangentialReport rep;
  const int n = lag.config_dim;
  const MetricField p = sasaki_metric(lag);
  for (const auto& x : samples) {
    const Mat blk = tangential_block(lag, x);
    const Mat target = -2.0 * lag.weights.c * lag.g.eval(x.head(n));
    rep.max_abs_deviation = std::max(rep.max_abs_deviation, (blk - target).cwiseAbs().maxCoeff());
    rep.worst_tangential = std::max(rep.worst_tangential, max_eig(blk));
    rep.all_positive_definite = rep.all_positive_definite && is_positive_definite(p.eval(x));
    ++rep.samples;
  }
  return rep;
}

LagrangianSystem exp_metric_toy(const SasakiWeights& w) {
  LagrangianSystem l;
  l.name = "exp_metric_toy";
  l.config_dim = 1;
  l.g = MetricField(
      1, MetricKind::closed_form,
      [](const Vec& q) { return Mat::Constant(1, 1, std::exp(-2.0 * q(0))); },
      [](const Vec& q) { return std::vector<Mat>{Mat::Constant(1, 1, -2.0 * std::exp(-2.0 * q(0)))}; },
      "exp(-2q)");
  l.christoffel_override = [](const Vec&) { return Christoffel{Mat::Constant(1, 1, -1.0)}; };
  l.weights = w;
  return l;
}

LagrangianSystem warped_plane(const SasakiWeights& w) {
  LagrangianSystem l;
  l.name = "warped_plane";
  l.config_dim = 2;
  l.g = MetricField(
      2, MetricKind::closed_form,
      [](const Vec& q) {
        Mat g = Mat::Identity(2, 2);
        g(1, 1) = q(0) * q(0) + 1.0;
        return g;
      },
      [](const Vec& q) {
        std::vector<Mat> d(2, Mat::Zero(2, 2));
        d[0](1, 1) = 2.0 * q(0);
        return d;
      },
      "diag(1, q1^2+1)");
  l.weights = w;
  return l;
}

LagrangianSystem lagrangian_by_name(const std::string& name, const SasakiWeights& w) {
  if (name == "exp_metric_toy" || name == "lagrangian_toy") return exp_metric_toy(w);
  if (name == "warped_plane") return warped_plane(w);
  throw Error(ErrorCode::Config, "unknown Lagrangian model '" + name + "'");
}

}  // namespace riemobs
