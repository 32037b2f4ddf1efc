#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "riemobs/linalg.hpp"

namespace riemobs {

enum class MetricKind { closed_form, grid_backed, immersion_induced, sasaki };

const char* metric_kind_name(MetricKind k);

using MatField = std::function<Mat(const Vec&)>;
using PartialsField = std::function<std::vector<Mat>(const Vec&)>;

// Symmetric covariant 2-tensor field. The evaluator is symmetrized on the way
// out; partials come from the analytic hook when present, otherwise central
// differences with step 1e-5 (1 + |x_i|).
class MetricField {
 public:
  MetricField() = default;
  MetricField(int dim, MetricKind kind, MatField eval, PartialsField partials = {},
              std::string label = "");

  int dim() const { return dim_; }
  MetricKind kind() const { return kind_; }
  const std::string& label() const { return label_; }
  bool valid() const { return static_cast<bool>(eval_); }

  Mat eval(const Vec& x) const;
  Mat operator()(const Vec& x) const { return eval(x); }
  std::vector<Mat> partials(const Vec& x) const;
  std::vector<Mat> fd_partials(const Vec& x) const;
  bool has_analytic_partials() const { return static_cast<bool>(partials_); }

  // grid-backed fields differentiate a piecewise interpolant
  bool partials_approximate() const { return approx_partials_; }
  MetricField& mark_partials_approximate(bool v = true) {
    approx_partials_ = v;
    return *this;
  }

  MetricField scaled(double c) const;

 private:
  int dim_ = 0;
  MetricKind kind_ = MetricKind::closed_form;
  MatField eval_;
  PartialsField partials_;
  std::string label_;
  bool approx_partials_ = false;
};

MetricField constant_metric(const Mat& p, std::string label = "constant");

}  // namespace riemobs
