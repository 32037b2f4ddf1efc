#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/ode.hpp"

namespace riemobs {

using VecField = std::function<Vec(const Vec&)>;
using Predicate = std::function<bool(const Vec&)>;
using HessField = std::function<std::vector<Mat>(const Vec&)>;

// k-th Lie derivative of the output, L_f^k h, with its Jacobian and optionally
// the second partials of each component.
struct LieOutput {
  VecField value;
  MatField jacobian;
  HessField hessians;
};

struct SystemDefinition {
  std::string name;
  int n = 0;
  int p = 0;
  VecField f;
  VecField h;
  MatField df;  // optional; central differences otherwise
  MatField dh;  // optional
  HessField output_hessians;  // optional, one n x n matrix per output
  Predicate domain;           // optional; everything allowed otherwise
  std::vector<LieOutput> lie_outputs;  // index k holds L_f^k h
};

class SystemModel {
 public:
  SystemModel() = default;
  explicit SystemModel(SystemDefinition d);

  const std::string& name() const { return d_->name; }
  int state_dim() const { return d_->n; }
  int output_dim() const { return d_->p; }

  Vec f(const Vec& x) const;
  Vec h(const Vec& x) const;
  Mat df(const Vec& x) const;
  Mat dh(const Vec& x) const;
  std::vector<Mat> output_hessians(const Vec& x) const;
  bool in_domain(const Vec& x) const;
  bool has_analytic_df() const { return static_cast<bool>(d_->df); }

  int lie_order() const { return static_cast<int>(d_->lie_outputs.size()) - 1; }
  const LieOutput& lie(int k) const;
  const SystemDefinition& definition() const { return *d_; }

 private:
  std::shared_ptr<const SystemDefinition> d_;
};

// central differences, step cbrt(eps) (1 + |x_i|)
Mat fd_jacobian(const VecField& g, const Vec& x);

struct IntegrationMeta {
  std::size_t accepted = 0, rejected = 0, rhs_evals = 0;
  double max_error_estimate = 0.0;
  bool domain_exit = false;
  double exit_time = 0.0;
  Integrator method = Integrator::adaptive_rk45;
};

struct TrajectorySegment {
  Vec base_point;
  std::vector<double> time_grid;  // increasing
  std::vector<Vec> states;
  IntegrationMeta meta;
  std::shared_ptr<const DenseSolution> dense;

  Vec at(double t) const { return dense->at(t); }
};

// Adaptive RK45 with rtol = tol, atol = 1e-3 tol.
TrajectorySegment integrate(const SystemModel& sys, const Vec& x0, double t_start, double t_end,
                            double tol);
TrajectorySegment integrate(const SystemModel& sys, const Vec& x0, double t_start, double t_end,
                            const IntegratorSettings& s);

// Bundled examples
SystemModel harmonic_oscillator();
SystemModel lagrangian_toy();
SystemModel linear_system(const Mat& a, const Mat& c, const std::string& name = "linear");
MetricField oscillator_analytic_metric(double lambda);
MetricField oscillator_weak_metric(double k, double ell);

// Names usable from config files: harmonic_oscillator, lagrangian_toy (alias
// exp_metric_toy), scalar_integrator (f = 0, h = x1, n from params).
SystemModel model_by_name(const std::string& name, const std::map<std::string, double>& params = {});

}  // namespace riemobs
