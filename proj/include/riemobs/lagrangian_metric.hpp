#pragma once

#include <functional>
#include <string>
#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/system_model.hpp"
#include "riemobs/tensor_calculus.hpp"

namespace riemobs {

struct SasakiWeights {
  double a = 1.0, b = 1.0, c = 0.5;
};

struct LagrangianSystem {
  std::string name = "lagrangian";
  int config_dim = 0;
  MetricField g;                                   // configuration metric
  std::function<Christoffel(const Vec&)> christoffel_override;
  std::function<Vec(const Vec&, double)> source;   // S(q, t); empty means zero
  bool time_dependent_source = false;
  SasakiWeights weights;

  Christoffel gamma(const Vec& q) const;
  Vec source_at(const Vec& q, double t) const;
};

void validate_weights(const SasakiWeights& w);

// state (q, v); h(q, v) = q. A time-dependent source is frozen at t = 0.
SystemModel euler_lagrange_dynamics(const LagrangianSystem& lag);
Vec euler_lagrange_rhs(const LagrangianSystem& lag, double t, const Vec& x);

MetricField sasaki_metric(const LagrangianSystem& lag);
// a eta'g eta + b (w + Gv eta)' g (w + Gv eta) - 2c eta' g (w + Gv eta)
double sasaki_quadratic_form(const LagrangianSystem& lag, const Vec& q, const Vec& v,
                             const Vec& eta, const Vec& omega);

struct TangentialReport {
  std::size_t samples = 0;
  double max_abs_deviation = 0.0;  // against -2c g(q)
  double worst_tangential = -std::numeric_limits<double>::infinity();  // max w'(block)w, |w| = 1
  bool all_positive_definite = true;
};

TangentialReport verify_tangential_identity(const LagrangianSystem& lag,
                                            const std::vector<Vec>& samples);
// velocity-block expression at one (q, v)
Mat tangential_block(const LagrangianSystem& lag, const Vec& x);

// g(q) = exp(-2q) on the line; Christoffel symbol -1
LagrangianSystem exp_metric_toy(const SasakiWeights& w = {});
// g(q) = diag(1, q1^2 + 1)
LagrangianSystem warped_plane(const SasakiWeights& w = {});
LagrangianSystem lagrangian_by_name(const std::string& name, const SasakiWeights& w);

}  // namespace riemobs
