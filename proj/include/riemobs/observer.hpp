#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "riemobs/geodesic.hpp"
#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/ode.hpp"
#include "riemobs/system_model.hpp"
#include "riemobs/tensor_calculus.hpp"

namespace riemobs {

enum class ObserverKind { full_order, reduced_order, ekf, kleinman };
const char* observer_kind_name(ObserverKind k);
ObserverKind parse_observer_kind(const std::string& s);

struct OutputMismatch {
  std::function<double(const Vec&, const Vec&)> value;
  std::function<Vec(const Vec&, const Vec&)> grad_a;   // d delta / d y_a, as a column
  std::function<Mat(const Vec&, const Vec&)> hess_aa;  // optional
  static OutputMismatch squared_euclidean();
};

struct MismatchCheck {
  double max_diagonal_value = 0.0;  // |delta(y, y)|
  double min_hessian_eig = 0.0;     // at coincidence
  bool ok = false;
};
MismatchCheck check_mismatch(const OutputMismatch& d, const std::vector<Vec>& ys);

// Dynamics in coordinates (y, xi) where the metric is block diagonal.
struct SplitSystem {
  int p = 1, r = 0;
  std::function<Vec(const Vec&, const Vec&)> f_y, f_xi;
  std::function<Mat(const Vec&, const Vec&)> df_xi;  // d f_xi / d xi, optional
  std::function<Mat(const Vec&)> p_xixi;  // xi-block metric as a function of y
  Diffeomorphism coords;                  // x -> (y, xi)
  Predicate domain;                       // on x, optional
};

SplitSystem oscillator_split(double k, double ell);
// pulls f through phi: (y, xi)' = Dphi(x) f(x) at x = phi^{-1}(y, xi)
SplitSystem split_from_coordinates(const SystemModel& sys, const Diffeomorphism& phi, int p,
                                   std::function<Mat(const Vec&)> p_xixi);

struct ObserverSpec {
  ObserverKind kind = ObserverKind::full_order;
  MetricField metric;
  double gain_k = 1.0;
  std::function<double(const Vec&)> gain_fn;  // k_E(xhat); overrides gain_k
  OutputMismatch delta = OutputMismatch::squared_euclidean();
  MatField q_tensor;  // ekf
  Mat pi0;            // ekf; empty: metric at xhat(0) when available, else identity
  double kleinman_horizon = 1.0;
  IntegratorSettings kleinman_integ;
  std::optional<SplitSystem> split;
  std::optional<double> rho_bar, delta2_lower;
};

Vec full_order_rhs(const ObserverSpec& spec, const SystemModel& sys, const Vec& xhat, const Vec& y);
Vec reduced_order_rhs(const SplitSystem& split, const Vec& y, const Vec& xihat);

struct EkfDerivative {
  Vec xhat_dot;
  Mat pi_dot;
};
EkfDerivative ekf_rhs(const SystemModel& sys, const MatField& q, const Vec& xhat, const Mat& pi,
                      const Vec& y);
Vec kleinman_rhs(const SystemModel& sys, double horizon, const Vec& xhat, const Vec& y,
                 const IntegratorSettings& s = {});

// phi(x) = (y, xi) with chart(x) = (y, xi_bar) and xi the value at h(x0) of
// dxi/dy = -Pbar_xixi^{-1} Pbar_xiy started from xi_bar at y.
Diffeomorphism eisenhart_coordinates(const SystemModel& sys, const MetricField& metric,
                                     const Vec& x0, const Diffeomorphism& chart);
Diffeomorphism identity_chart(int n);

struct SimulationOptions {
  IntegratorSettings integ;  // default: fixed RK4, step 1e-3
  GeodesicOptions geodesic;
  MetricField distance_metric;  // default: spec.metric
  SimulationOptions() {
    integ.method = Integrator::fixed_rk4;
    integ.fixed_step = 1e-3;
    geodesic.tol = 1e-11;
    geodesic.steps = 64;
  }
};

struct TraceEvent {
  double t = 0.0;
  std::string kind;
  std::string detail;
};

struct SimulationTrace {
  ObserverKind kind = ObserverKind::full_order;
  int n = 0, p = 0, obs_dim = 0;
  std::vector<double> times;
  std::vector<Vec> plant_states, observer_states, outputs;
  std::vector<double> error_euclidean, error_riemannian;
  std::vector<bool> riem_converged;
  std::vector<TraceEvent> events;
  bool completed = false;
};

SimulationTrace simulate(const SystemModel& sys, const ObserverSpec& spec, const Vec& x0,
                         const Vec& xhat0, double t_end, double sample_dt,
                         bool with_riemannian_distance, const SimulationOptions& opt = {});

void write_trace_csv(const SimulationTrace& tr, std::ostream& os,
                     const std::vector<std::string>& comments = {});
std::string format_number(double v);

// least-squares slope of log(values) on [t0, t1], ignoring non-positive entries
double fitted_rate(const std::vector<double>& times, const std::vector<double>& values, double t0,
                   double t1);

}  // namespace riemobs
