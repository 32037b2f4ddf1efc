#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "riemobs/linalg.hpp"

namespace riemobs {

using OdeRhs = std::function<Vec(double, const Vec&)>;

enum class Integrator { adaptive_rk45, fixed_rk4 };

struct IntegratorSettings {
  Integrator method = Integrator::adaptive_rk45;
  double rtol = 1e-10;
  double atol = 1e-12;
  double fixed_step = 1e-2;  // magnitude; sign follows the span
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 2000000;
};

enum class OdeStatus { completed, domain_exit, step_failure };

// Piecewise dense output. Each step keeps the quartic DOPRI interpolant;
// RK4 steps store the cubic Hermite form (last coefficient zero).
class DenseSolution {
 public:
  struct Step {
    double t0, h;
    Vec r1, r2, r3, r4, r5;
  };

  double t_begin() const { return span_begin; }
  double t_end() const { return span_end; }
  Vec at(double t) const;

  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Step> steps;
  OdeStatus status = OdeStatus::completed;
  std::size_t accepted = 0, rejected = 0, rhs_evals = 0;
  double max_error_estimate = 0.0;
  double exit_time = 0.0;  // last good time when status != completed
  double span_begin = 0.0, span_end = 0.0;
};

// Integrates from t0 to t1 (t1 < t0 allowed). Stops with domain_exit the first
// time an accepted state violates `in_domain`.
DenseSolution solve_ode(const OdeRhs& f, double t0, const Vec& y0, double t1,
                        const IntegratorSettings& s,
                        const std::function<bool(const Vec&)>& in_domain = {});

// One classical RK4 step, exposed for residual checks.
Vec rk4_step(const OdeRhs& f, double t, const Vec& y, double h);

// Fixed-step RK4 returning every node; used where bitwise reproducibility matters.
std::vector<Vec> rk4_nodes(const OdeRhs& f, double t0, const Vec& y0, double t1, int n_steps);

}  // namespace riemobs
