#include "riemobs/metric_field.hpp"

#include <cmath>

#include "riemobs/errors.hpp"

namespace riemobs {

const char* metric_kind_name(MetricKind k) {
  switch (k) {
    case MetricKind::closed_form: return "closed_form";
    case MetricKind::grid_backed: return "grid_backed";
    case MetricKind::immersion_induced: return "immersion_induced";
    case MetricKind::sasaki: return "sasaki";
  }
  return "unknown";
}

MetricField::MetricField(int dim, MetricKind kind, MatField eval, PartialsField partials,
                         std::string label)
    : dim_(dim), kind_(kind), eval_(std::move(eval)), partials_(std::move(partials)),
      label_(std::move(label)) {}

Mat MetricField::eval(const Vec& x) const {
  if (!eval_) throw Error(ErrorCode::Config, "metric field has no evaluator");
  if (x.size() != dim_) throw Error(ErrorCode::DomainError, "metric dimension mismatch");
  Mat p = eval_(x);
  return symmetrize(p);
}

std::vector<Mat> MetricField::fd_partials(const Vec& x) const {
  std::vector<Mat> out;
  out.reserve(dim_);
  for (int i = 0; i < dim_; ++i) {
    double h = 1e-5 * (1.0 + std::abs(x(i)));
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    out.push_back((eval(xp) - eval(xm)) / (xp(i) - xm(i)));
  }
  return out;
}

std::vector<Mat> MetricField::partials(const Vec& x) const {
  if (!partials_) return fd_partials(x);
  std::vector<Mat> d = partials_(x);
  for (auto& m : d) m = symmetrize(m);
  return d;
}

MetricField MetricField::scaled(double c) const {
  MatField e = [f = eval_, c](const Vec& x) { return Mat(c * f(x)); };
  PartialsField d;
  if (partials_) {
    d = [g = partials_, c](const Vec& x) {
      auto v = g(x);
      for (auto& m : v) m *= c;
      return v;
    };
  }
  MetricField out(dim_, kind_, e, d, label_);
  out.approx_partials_ = approx_partials_;
  return out;
}

MetricField constant_metric(const Mat& p, std::string label) {
  const int n = static_cast<int>(p.rows());
  return MetricField(
      n, MetricKind::closed_form, [p](const Vec&) { return p; },
      [n](const Vec&) { return std::vector<Mat>(n, Mat::Zero(n, n)); }, std::move(label));
}

}  // namespace riemobs
