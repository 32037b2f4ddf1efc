#pragma once

#include <optional>
#include <string>
#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/ode.hpp"
#include "riemobs/system_model.hpp"

namespace riemobs {

enum class RiccatiVariant { riccati_q, lambda_linear, radon, grammian_finite_t };

const char* variant_name(RiccatiVariant v);
RiccatiVariant parse_variant(const std::string& s);

struct RiccatiConfig {
  RiccatiVariant variant = RiccatiVariant::lambda_linear;
  MatField q_tensor;  // riccati_q and radon
  std::string q_description;
  double lambda = 1.0;
  std::optional<double> horizon;  // empty: adaptive doubling
  double adaptive_tol = 1e-6;
  double p_lower_init = 1e-3;
  Mat initial_pi;              // empty: p_lower_init * I
  double initial_horizon = 0;  // 0: 4/lambda or 4/sqrt|Q|
  double horizon_cap = 0;      // 0: 200/lambda or 200/sqrt|Q|
  IntegratorSettings integ;
  double blowup_guard = 1e12;
};

struct MetricSolve {
  Mat p;
  double horizon = 0.0;
  int doublings = 0;
  bool converged = true;
  std::vector<double> increments;  // |Pi(2T) - Pi(T)| / |Pi(2T)| per doubling
  bool monotone = true;            // increments decreased at every doubling
};

Mat compute_metric_at(const SystemModel& sys, const RiccatiConfig& cfg, const Vec& x);
MetricSolve compute_metric_detailed(const SystemModel& sys, const RiccatiConfig& cfg, const Vec& x);

Mat compute_metric_radon(const SystemModel& sys, const RiccatiConfig& cfg, const Vec& x);

// int_{-T}^0 e^{lambda t} Phi(t,0)^T C^T C Phi(t,0) dt
Mat grammian(const SystemModel& sys, const Vec& x, double horizon, double lambda,
             const IntegratorSettings& s = {});
MetricSolve grammian_adaptive(const SystemModel& sys, const Vec& x, double lambda, double tol,
                              const IntegratorSettings& s = {});

double reconstructibility_margin(const SystemModel& sys, const std::vector<Vec>& samples,
                                 double tau);

// recomputes the flow at every query; partials by central differences
MetricField riccati_metric_field(const SystemModel& sys, const RiccatiConfig& cfg);

// |L_f P - C^T C + P Q P| (riccati_q) or |L_f P - C^T C + lambda P|, Frobenius
double riccati_residual(const SystemModel& sys, const RiccatiConfig& cfg, const MetricField& metric,
                        const Vec& x);

}  // namespace riemobs
