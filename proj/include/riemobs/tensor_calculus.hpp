#pragma once

#include <functional>
#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/system_model.hpp"

namespace riemobs {

// G[l](i, j) = Gamma^l_{ij}
using Christoffel = std::vector<Mat>;

// L_f P = sum_i dP/dx_i f_i + P df + df^T P
Mat lie_derivative(const SystemModel& sys, const MetricField& metric, const Vec& x);
Mat lie_derivative_field(const VecField& f, const MatField& df, const MetricField& metric,
                         const Vec& x);

// [((I + t df) v)^T P(X(x,t)) ((I + t df) v) - v^T P(x) v] / t
double lie_derivative_flow_check(const SystemModel& sys, const MetricField& metric, const Vec& x,
                                 const Vec& v, double t_step);
// Richardson limit of the quotient over t, t/2, t/4
double lie_derivative_flow_limit(const SystemModel& sys, const MetricField& metric, const Vec& x,
                                 const Vec& v, double t_step);

Christoffel christoffel(const MetricField& metric, const Vec& x);
Christoffel christoffel_from(const Mat& p, const std::vector<Mat>& dp);
// Gamma(a, b)^l = Gamma^l_{ij} a^i b^j
Vec contract(const Christoffel& g, const Vec& a, const Vec& b);

Vec riemannian_gradient(const MetricField& metric, const Vec& dh_row, const Vec& x);

struct ScalarField {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  std::function<Mat(const Vec&)> hessian;
};

Mat riemannian_hessian(const MetricField& metric, const ScalarField& h, const Vec& x);

struct Diffeomorphism {
  VecField map;
  MatField jacobian;  // optional; central differences otherwise
  VecField inverse;
};

Mat diffeo_jacobian(const Diffeomorphism& phi, const Vec& x);

// Metric in the new coordinates z = phi(x): P~(z) = J^{-T} P(x) J^{-1}, x = phi^{-1}(z).
MetricField pushforward_metric(const MetricField& metric, const Diffeomorphism& phi);

}  // namespace riemobs
