#include "riemobs/detectability.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "riemobs/errors.hpp"
#include "riemobs/tensor_calculus.hpp"

namespace riemobs {

namespace {

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

double radical_inverse(std::uint64_t i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

// portable standard normal from the raw engine
double normal(std::mt19937_64& g) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double u1 = (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
  double u2 = static_cast<double>(g() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace

std::vector<Vec> RegionSampler::draw(std::size_t count) const {
  const Eigen::Index d = lo.size();
  if (d > static_cast<Eigen::Index>(std::size(kPrimes)))
    throw Error(ErrorCode::Config, "sampler supports at most 16 dimensions");
  std::vector<Vec> out;
  out.reserve(count);
  std::uint64_t i = seed * 7919 + 1;
  const std::uint64_t limit = i + 1000 * (count + 1);
  for (; out.size() < count && i < limit; ++i) {
    Vec x(d);
    for (Eigen::Index k = 0; k < d; ++k)
      x(k) = lo(k) + (hi(k) - lo(k)) * radical_inverse(i, kPrimes[k]);
    if (!filter || filter(x)) out.push_back(x);
  }
  if (out.size() < count) throw Error(ErrorCode::Config, "sampler filter rejects almost everything");
  return out;
}

RegionSampler oscillator_region(double x3_lo, double x3_hi, double r2_lo, double r2_hi,
                                std::uint64_t seed) {
  RegionSampler s;
  const double r = std::sqrt(r2_hi);
  s.lo = Vec((Vec(3) << -r, -r, x3_lo).finished());
  s.hi = Vec((Vec(3) << r, r, x3_hi).finished());
  s.filter = [r2_lo, r2_hi](const Vec& x) {
    const double r2 = x(0) * x(0) + x(1) * x(1);
    return r2 >= r2_lo && r2 <= r2_hi;
  };
  s.seed = seed;
  return s;
}

const char* classification_name(Classification c) {
  switch (c) {
    case Classification::strong: return "strong";
    case Classification::weak: return "weak";
    case Classification::fails: return "fails";
  }
  return "unknown";
}

nlohmann::json DetectabilityReport::to_json() const {
  nlohmann::json j;
  j["classification"] = classification_name(classification);
  j["worst_tangential_value"] = worst_tangential_value;
  j["worst_ratio"] = worst_ratio;
  if (std::isfinite(estimated_rho))
    j["estimated_rho"] = estimated_rho;
  else
    j["estimated_rho"] = nullptr;
  j["estimated_q"] = estimated_q;
  j["sample_count"] = sample_count;
  j["bounds"] = {{"p_lower", p_lower}, {"p_upper", p_upper}};
  nlohmann::json w = nlohmann::json::array();
  for (const auto& f : failures) {
    nlohmann::json e;
    e["x"] = std::vector<double>(f.x.data(), f.x.data() + f.x.size());
    e["v"] = std::vector<double>(f.v.data(), f.v.data() + f.v.size());
    e["value"] = f.value;
    w.push_back(e);
  }
  j["witnesses"] = w;
  return j;
}

DetectabilityReport check_detectability(const SystemModel& sys, const MetricField& metric,
                                        const RegionSampler& sampler, std::size_t n_samples,
                                        const DetectabilityOptions& opt) {
  return check_detectability_at(sys, metric, sampler.draw(n_samples), opt);
}

DetectabilityReport check_detectability_at(const SystemModel& sys, const MetricField& metric,
                                           const std::vector<Vec>& samples,
                                           const DetectabilityOptions& opt) {
  const int n = sys.state_dim();
  if (metric.dim() != n) throw Error(ErrorCode::Config, "metric and system dimensions differ");
  if (sys.output_dim() >= n) throw Error(ErrorCode::EmptyKernel, "output kernel is trivial");
  DetectabilityReport rep;
  std::mt19937_64 rng(opt.seed);
  bool strict = true, weak = true;
  for (const auto& x : samples) {
    const Mat p = metric.eval(x);
    if (!is_positive_definite(p)) throw Error(ErrorCode::SingularMetric, "metric not positive definite at a sample");
    rep.p_lower = std::min(rep.p_lower, min_eig(p));
    rep.p_upper = std::max(rep.p_upper, max_eig(p));
    const Mat l = lie_derivative(sys, metric, x);
    const Mat k = kernel_basis(sys.dh(x));
    const int r = static_cast<int>(k.cols());
    std::vector<Vec> dirs;
    for (int i = 0; i < r; ++i) {
      dirs.push_back(k.col(i));
      dirs.push_back(-k.col(i));
    }
    for (int i = 0; i < opt.random_directions; ++i) {
      Vec c(r);
      for (int j = 0; j < r; ++j) c(j) = normal(rng);
      dirs.push_back((k * c).normalized());
    }
    // the extremal direction on the kernel sphere closes the sampling
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(symmetrize(k.transpose() * l * k),
                                                     symmetrize(k.transpose() * p * k));
    dirs.push_back((k * es.eigenvectors().col(r - 1)).normalized());
    for (const auto& v : dirs) {
      const double val = v.dot(l * v), pv = v.dot(p * v);
      rep.worst_tangential_value = std::max(rep.worst_tangential_value, val);
      rep.worst_ratio = std::max(rep.worst_ratio, val / pv);
      const bool s_ok = val < -opt.margin * pv;
      const bool w_ok = val <= opt.tolerance * pv;
      strict = strict && s_ok;
      weak = weak && w_ok;
      if (!s_ok && rep.failures.size() < opt.max_witnesses) rep.failures.push_back({x, v, val});
    }
    ++rep.sample_count;
  }
  rep.classification = strict ? Classification::strong : weak ? Classification::weak : Classification::fails;
  if (!weak) {
    // keep only genuine violations as witnesses
    std::vector<Witness> bad;
    for (const auto& w : rep.failures)
      if (w.value > opt.tolerance * w.v.dot(metric.eval(w.x) * w.v)) bad.push_back(w);
    rep.failures = bad;
  }
  if (rep.classification == Classification::strong) {
    rep.failures.clear();
    if (opt.estimate_rates) {
      try {
        auto rp = estimate_rate_pair_at(sys, metric, samples);
        rep.estimated_rho = rp.rho_bar;
        rep.estimated_q = rp.q_lower;
      } catch (const Error&) {
        rep.estimated_q = 0.0;
      }
    }
  }
  return rep;
}

double tangential_q_sup(const Mat& l, const Mat& p, const Mat& dh) {
  const Mat k = kernel_basis(dh);
  return -gen_max_eig(k.transpose() * l * k, k.transpose() * p * k);
}

double rho_at(const Mat& l, const Mat& p, const Mat& dh, double q) {
  const int n = static_cast<int>(p.rows());
  const int pd = static_cast<int>(dh.rows());
  Eigen::HouseholderQR<Mat> qr(dh.transpose());
  const Mat qf = qr.householderQ() * Mat::Identity(n, n);
  const Mat r = qf.leftCols(pd), k = qf.rightCols(n - pd);
  const Mat nm = l + q * p;
  const Mat nkk = k.transpose() * nm * k, nrk = r.transpose() * nm * k;
  Eigen::LLT<Mat> llt(Mat(-nkk));
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::Infeasible, "kernel block not negative definite at this q");
  const Mat s = r.transpose() * nm * r + nrk * llt.solve(Mat(nrk.transpose()));
  const Mat cr = dh * r;
  return gen_max_eig(s, cr.transpose() * cr);
}

RatePair estimate_rate_pair(const SystemModel& sys, const MetricField& metric,
                            const RegionSampler& sampler, std::size_t n_samples) {
  return estimate_rate_pair_at(sys, metric, sampler.draw(n_samples));
}

RatePair estimate_rate_pair_at(const SystemModel& sys, const MetricField& metric,
                               const std::vector<Vec>& samples) {
  if (sys.output_dim() >= sys.state_dim())
    throw Error(ErrorCode::EmptyKernel, "output kernel is trivial");
  std::vector<Mat> ls, ps, cs;
  double q = std::numeric_limits<double>::infinity();
  for (const auto& x : samples) {
    ls.push_back(lie_derivative(sys, metric, x));
    ps.push_back(metric.eval(x));
    cs.push_back(sys.dh(x));
    const double qs = tangential_q_sup(ls.back(), ps.back(), cs.back());
    if (!(qs > 0.0)) {
      const Mat k = kernel_basis(cs.back());
      Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(symmetrize(k.transpose() * ls.back() * k),
                                                       symmetrize(k.transpose() * ps.back() * k));
      const Vec v = (k * es.eigenvectors().col(k.cols() - 1)).normalized();
      std::ostringstream os;
      os << "no q > 0 at x = (" << x.transpose() << "), witness v = (" << v.transpose()
         << "), sup q = " << qs;
      throw Error(ErrorCode::Infeasible, os.str());
    }
    q = std::min(q, qs);
  }
  RatePair rp;
  rp.q_lower = q * (1.0 - 1e-6);
  rp.rho_bar = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    rp.rho_bar = std::max(rp.rho_bar, rho_at(ls[i], ps[i], cs[i], rp.q_lower));
  return rp;
}

nlohmann::json SplitReport::to_json() const {
  nlohmann::json j;
  j["classification"] = classification_name(classification);
  j["feasible_q"] = feasible_q;
  j["max_dy_metric"] = max_dy_metric;
  j["y_independent"] = max_dy_metric == 0.0;
  j["sample_count"] = sample_count;
  return j;
}

Mat split_condition_matrix(const SplitSystem& split,
                           const std::function<Mat(const Vec&, const Vec&)>& p_xixi,
                           const Vec& y, const Vec& xi) {
  const Mat p = p_xixi(y, xi);
  const Mat f = split.df_xi ? split.df_xi(y, xi)
                            : fd_jacobian([&](const Vec& z) { return split.f_xi(y, z); }, xi);
  Mat m = p * f + f.transpose() * p;
  const Vec fy = split.f_y(y, xi), fx = split.f_xi(y, xi);
  auto dp = [&](bool wrt_y, Eigen::Index i) {
    Vec yp = y, ym = y, xp = xi, xm = xi;
    double h;
    if (wrt_y) {
      h = 1e-5 * (1.0 + std::abs(y(i)));
      yp(i) += h;
      ym(i) -= h;
      return Mat((p_xixi(yp, xi) - p_xixi(ym, xi)) / (yp(i) - ym(i)));
    }
    h = 1e-5 * (1.0 + std::abs(xi(i)));
    xp(i) += h;
    xm(i) -= h;
    return Mat((p_xixi(y, xp) - p_xixi(y, xm)) / (xp(i) - xm(i)));
  };
  for (Eigen::Index i = 0; i < y.size(); ++i) m += fy(i) * dp(true, i);
  for (Eigen::Index i = 0; i < xi.size(); ++i) m += fx(i) * dp(false, i);
  return symmetrize(m);
}

SplitReport check_split_condition(const SplitSystem& split,
                                  const std::function<Mat(const Vec&, const Vec&)>& p_xixi,
                                  const RegionSampler& sampler, std::size_t n_samples,
                                  double tolerance) {
  SplitReport rep;
  for (const auto& s : sampler.draw(n_samples)) {
    if (split.r <= 0 || s.size() != split.p + split.r)
      throw Error(ErrorCode::Config, "sample size does not match the split dimensions");
    const Vec y = s.head(split.p), xi = s.tail(split.r);
    const Mat p = p_xixi(y, xi);
    if (!is_positive_definite(p)) throw Error(ErrorCode::SingularMetric, "xi metric not positive definite");
    const Mat m = split_condition_matrix(split, p_xixi, y, xi);
    rep.feasible_q = std::min(rep.feasible_q, gen_min_eig(-m, p));
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      Vec yp = y, ym = y;
      const double h = 1e-5 * (1.0 + std::abs(y(i)));
      yp(i) += h;
      ym(i) -= h;
      rep.max_dy_metric = std::max(rep.max_dy_metric, (p_xixi(yp, xi) - p_xixi(ym, xi)).cwiseAbs().maxCoeff() / (2 * h));
    }
    ++rep.sample_count;
  }
  rep.classification = rep.feasible_q > tolerance ? Classification::strong
                       : rep.feasible_q >= -tolerance ? Classification::weak
                                                      : Classification::fails;
  return rep;
}

}  // namespace riemobs
