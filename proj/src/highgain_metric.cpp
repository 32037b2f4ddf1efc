#include "riemobs/highgain_metric.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "riemobs/errors.hpp"

namespace riemobs {

namespace {

Mat kron_eye(const Mat& a, int m) {
  Mat out = Mat::Zero(a.rows() * m, a.cols() * m);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * m, j * m, m, m) = a(i, j) * Mat::Identity(m, m);
  return out;
}

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// X A + A^T X = -I
Mat lyapunov(const Mat& a) {
  const int n = static_cast<int>(a.rows());
  Mat big = Mat::Zero(n * n, n * n);
  const Mat id = Mat::Identity(n, n);
  // column-major vec: vec(X A) = (A^T kron I) vec X, vec(A^T X) = (I kron A^T) vec X
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      big.block(i * n, j * n, n, n) += a(j, i) * id;
      big.block(i * n, j * n, n, n) += id(i, j) * a.transpose();
    }
  Vec rhs = -Eigen::Map<const Vec>(id.data(), n * n);
  Vec x = big.fullPivLu().solve(rhs);
  return symmetrize(Eigen::Map<const Mat>(x.data(), n, n));
}

}  // namespace

Vec ImmersionData::H(const Vec& x) const {
  Vec out(order * out_dim);
  for (int k = 0; k < order; ++k) out.segment(k * out_dim, out_dim) = system.lie(k).value(x);
  return out;
}

Mat ImmersionData::dH(const Vec& x) const {
  Mat out(order * out_dim, state_dim);
  for (int k = 0; k < order; ++k) out.middleRows(k * out_dim, out_dim) = system.lie(k).jacobian(x);
  return out;
}

Vec ImmersionData::top(const Vec& x) const { return system.lie(order).value(x); }
Mat ImmersionData::dtop(const Vec& x) const { return system.lie(order).jacobian(x); }

Mat ImmersionData::dLfH(const Vec& x) const {
  Mat out(order * out_dim, state_dim);
  for (int k = 0; k < order; ++k)
    out.middleRows(k * out_dim, out_dim) = system.lie(k + 1).jacobian(x);
  return out;
}

ImmersionData build_immersion(const SystemModel& sys, int order, const std::vector<Vec>& samples,
                              double safety) {
  if (order < 1) throw Error(ErrorCode::Config, "immersion order must be positive");
  if (sys.lie_order() < order)
    throw Error(ErrorCode::LieOutputsMissing, "system provides Lie outputs up to order " +
                                                  std::to_string(sys.lie_order()));
  if (samples.empty()) throw Error(ErrorCode::Config, "immersion bounds need samples");
  ImmersionData imm;
  imm.order = order;
  imm.out_dim = sys.output_dim();
  imm.state_dim = sys.state_dim();
  imm.system = sys;
  imm.safety = safety;
  imm.sample_count = samples.size();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  double nu = std::numeric_limits<double>::infinity();
  for (const auto& x : samples) {
    const Mat d = imm.dH(x);
    const Mat g = d.transpose() * d;
    lo = std::min(lo, min_eig(g));
    hi = std::max(hi, max_eig(g));
    if (!is_positive_definite(g)) continue;
    const Mat l = imm.dtop(x);
    const double r = gen_max_eig(l.transpose() * l, g);
    if (r > 0.0) nu = std::min(nu, 1.0 / std::sqrt(r));
  }
  imm.h_lower = lo;
  imm.h_upper = hi;
  if (!(lo > 1e-12))
    throw Error(ErrorCode::ImmersionDegenerate, "dH^T dH is singular on the sample set");
  imm.nu_sampled = nu;
  imm.nu = nu / safety;
  return imm;
}

Vec structural_residual(const ImmersionData& imm, const Vec& x) {
  const auto cm = chain_matrices(imm.order, imm.out_dim);
  const Vec lfh = imm.dH(x) * imm.system.f(x);
  return lfh - cm.a * imm.H(x) - cm.b * imm.top(x);
}

ChainMatrices chain_matrices(int order, int m) {
  Mat a = Mat::Zero(order, order);
  for (int i = 0; i + 1 < order; ++i) a(i, i + 1) = 1.0;
  Mat b = Mat::Zero(order, 1);
  b(order - 1, 0) = 1.0;
  Mat c = Mat::Zero(1, order);
  c(0, 0) = 1.0;
  return {kron_eye(a, m), kron_eye(b, m), kron_eye(c, m)};
}

Mat lmi_residual(const Mat& p, const Mat& k, double q, double nu, int order, int m) {
  const auto cm = chain_matrices(order, m);
  const Mat ak = cm.a - k * cm.c;
  Mat r = p * ak + ak.transpose() * p + 2.0 * q * Mat::Identity(p.rows(), p.cols());
  if (std::isfinite(nu)) r += (p * cm.b) * (p * cm.b).transpose() / (q * nu * nu);
  return symmetrize(r);
}

ResidualCheck check_negative(const Mat& m) {
  ResidualCheck out;
  const Eigen::Index n = m.rows();
  Vec e(n);
  for (Eigen::Index i = 0; i < n; ++i) e(i) = 1.0 / std::sqrt(std::max(std::abs(m(i, i)), 1e-300));
  const Mat me = e.asDiagonal() * m * e.asDiagonal();
  out.max_eig_equilibrated = max_eig(me);
  Eigen::LLT<Mat> llt(-me);
  out.negative_definite = llt.info() == Eigen::Success && -out.max_eig_equilibrated > 0.0;
  Eigen::LLT<Mat> raw(-m);
  if (raw.info() == Eigen::Success) {
    // -M = L L^T; one-sided Jacobi gives the singular values of L to high relative accuracy
    Mat l = raw.matrixL();
    Eigen::JacobiSVD<Mat> svd(l);
    const double smin = svd.singularValues()(n - 1);
    out.max_eig_raw = -smin * smin;
  } else {
    out.max_eig_raw = max_eig(m);
    out.negative_definite = false;
  }
  return out;
}

LmiCertificate solve_lmi(int order, int m, double nu) {
  if (order < 1 || m < 1) throw Error(ErrorCode::Config, "order and output width must be positive");
  if (!(nu > 0.0)) throw Error(ErrorCode::Config, "nu must be positive");
  const int n = order;
  Mat a = Mat::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) a(i, i + 1) = 1.0;
  Vec k0(n);
  for (int i = 0; i < n; ++i) k0(i) = binom(n, i + 1);
  Mat a0 = a;
  a0.col(0) -= k0;
  const Mat p0 = lyapunov(a0);
  const Vec pe = p0.col(n - 1);
  const double inf_nu = std::isfinite(nu) ? 1.0 / (nu * nu) : 0.0;

  // With D = diag(1, 1/g, ..) and P = D P0 D the residual is congruent to
  // -g I + 2q D^-2 + g^{-2(n-1)} (P0 e_n)(P0 e_n)^T / (q nu^2); search (g, q) on it.
  auto scaled = [&](double g, double q) {
    Mat s = -g * Mat::Identity(n, n);
    for (int i = 0; i < n; ++i) s(i, i) += 2.0 * q * std::pow(g, 2.0 * i);
    s += std::pow(g, -2.0 * (n - 1)) * inf_nu / q * (pe * pe.transpose());
    return Mat(s / g);
  };
  const int nq = 1241;
  for (double g = 1.0; g < 1e8; g *= 1.2) {
    double best = std::numeric_limits<double>::infinity(), bq = 0.0;
    for (int i = 0; i < nq; ++i) {
      const double q = std::pow(10.0, -60.0 + 62.0 * i / (nq - 1));
      const double v = max_eig(scaled(g, q));
      if (v < best) {
        best = v;
        bq = q;
      }
    }
    if (best > -1e-9) continue;
    Vec dg(n), kg(n);
    for (int i = 0; i < n; ++i) {
      dg(i) = std::pow(g, -static_cast<double>(i));
      kg(i) = k0(i) * std::pow(g, i + 1.0);
    }
    LmiCertificate c;
    c.order = order;
    c.out_dim = m;
    c.p_nu = kron_eye(Mat(dg.asDiagonal() * p0 * dg.asDiagonal()), m);
    c.k_nu = kron_eye(Mat(kg), m);
    c.q_margin = bq;
    c.nu = nu;
    c.gain = g;
    auto chk = verify_certificate(c);
    c.residual_max_eig = chk.max_eig_equilibrated;
    c.residual_max_eig_raw = chk.max_eig_raw;
    c.negative_definite = chk.negative_definite;
    if (c.negative_definite) return c;
  }
  throw Error(ErrorCode::Infeasible, "no gain up to 1e8 satisfies the inequality for nu=" +
                                         std::to_string(nu));
}

ResidualCheck verify_certificate(const LmiCertificate& cert) {
  if (!is_positive_definite(cert.p_nu))
    return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), false};
  return check_negative(
      lmi_residual(cert.p_nu, cert.k_nu, cert.q_margin, cert.nu, cert.order, cert.out_dim));
}

nlohmann::json LmiCertificate::to_json() const {
  nlohmann::json j;
  j["order"] = order;
  j["out_dim"] = out_dim;
  j["nu"] = nu;
  j["gain"] = gain;
  j["q_margin"] = q_margin;
  j["residual_max_eig"] = residual_max_eig;
  j["residual_max_eig_raw"] = residual_max_eig_raw;
  j["negative_definite"] = negative_definite;
  auto rows = [](const Mat& mm) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index i = 0; i < mm.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index k = 0; k < mm.cols(); ++k) row.push_back(mm(i, k));
      r.push_back(row);
    }
    return r;
  };
  j["P_nu"] = rows(p_nu);
  j["K_nu"] = rows(k_nu);
  return j;
}

MetricField immersion_metric(const ImmersionData& imm, const LmiCertificate& cert) {
  if (cert.nu > imm.nu * (1.0 + 1e-12))
    throw Error(ErrorCode::NuMismatch, "certificate nu exceeds the immersion estimate");
  if (cert.p_nu.rows() != imm.order * imm.out_dim)
    throw Error(ErrorCode::NuMismatch, "certificate size does not match the immersion");
  const Mat p = cert.p_nu;
  auto eval = [imm, p](const Vec& x) {
    const Mat d = imm.dH(x);
    return Mat(d.transpose() * p * d);
  };
  PartialsField partials;
  bool analytic = true;
  for (int k = 0; k < imm.order; ++k) analytic = analytic && static_cast<bool>(imm.system.lie(k).hessians);
  if (analytic) {
    partials = [imm, p](const Vec& x) {
      const int n = imm.state_dim, m = imm.out_dim;
      const Mat d = imm.dH(x);
      std::vector<Mat> hs;  // per stacked component
      for (int k = 0; k < imm.order; ++k) {
        auto hk = imm.system.lie(k).hessians(x);
        hs.insert(hs.end(), hk.begin(), hk.end());
      }
      std::vector<Mat> out(n);
      for (int i = 0; i < n; ++i) {
        Mat dd(imm.order * m, n);
        for (std::size_t r = 0; r < hs.size(); ++r) dd.row(r) = hs[r].col(i).transpose();
        const Mat t = dd.transpose() * p * d;
        out[i] = t + t.transpose();
      }
      return out;
    };
  }
  return MetricField(imm.state_dim, MetricKind::immersion_induced, eval, partials, "immersion");
}

Mat immersion_lie_derivative(const ImmersionData& imm, const LmiCertificate& cert, const Vec& x) {
  const Mat t = imm.dLfH(x).transpose() * cert.p_nu * imm.dH(x);
  return symmetrize(t + t.transpose());
}

double decay_margin(const ImmersionData& imm, const LmiCertificate& cert) {
  return cert.q_margin * imm.h_lower / (max_eig(cert.p_nu) * imm.h_upper);
}

}  // namespace riemobs
