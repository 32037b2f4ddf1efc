#pragma once

#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/system_model.hpp"

namespace riemobs {

struct GeodesicOptions {
  double tol = 1e-10;        // endpoint mismatch (Euclidean)
  int max_newton = 50;
  int steps = 128;           // fixed RK4 steps over s in [0, 1]
  int segments = 4;          // multiple-shooting fallback
  bool allow_fallback = true;
  Predicate domain;          // optional: states along the path
};

struct GeodesicResult {
  TrajectorySegment path;  // s-grid, states (gamma, gamma')
  double length = 0.0;
  bool converged = false;
  double shooting_residual = 0.0;
  int iterations = 0;
  bool multiple_shooting = false;
};

// Shooting on the initial velocity; on divergence falls back to multiple
// shooting. Never throws on non-convergence, the flag carries it.
GeodesicResult geodesic_shoot(const MetricField& metric, const Vec& xa, const Vec& xb,
                              const GeodesicOptions& opt = {});
GeodesicResult geodesic_shoot(const MetricField& metric, const Vec& xa, const Vec& xb, double tol);

// trapezoid rule of sqrt(v^T P v) over the stored path
double path_length(const MetricField& metric, const TrajectorySegment& path);

}  // namespace riemobs
