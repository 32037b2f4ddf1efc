#pragma once

#include <cstdint>
#include <json.hpp>
#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/observer.hpp"
#include "riemobs/system_model.hpp"

namespace riemobs {

// Halton points in a box, optionally filtered; the seed shifts the sequence.
struct RegionSampler {
  Vec lo, hi;
  Predicate filter;
  std::uint64_t seed = 0;
  std::vector<Vec> draw(std::size_t count) const;
};

// x1, x2 box with x1^2 + x2^2 in [r2_lo, r2_hi], x3 in [x3_lo, x3_hi]
RegionSampler oscillator_region(double x3_lo = 1.0, double x3_hi = 10.0, double r2_lo = 0.1,
                                double r2_hi = 10.0, std::uint64_t seed = 0);

enum class Classification { strong, weak, fails };
const char* classification_name(Classification c);

struct Witness {
  Vec x, v;
  double value = 0.0;  // v^T L_f P v with |v| = 1
};

struct DetectabilityOptions {
  double margin = 1e-8;     // strict side, relative to v^T P v
  double tolerance = 1e-8;  // weak side, relative to v^T P v
  int random_directions = 8;
  std::uint64_t seed = 0;
  std::size_t max_witnesses = 16;
  bool estimate_rates = true;
};

struct DetectabilityReport {
  Classification classification = Classification::fails;
  double worst_tangential_value = -std::numeric_limits<double>::infinity();
  double worst_ratio = -std::numeric_limits<double>::infinity();  // max v'Lv / v'Pv
  double estimated_rho = std::numeric_limits<double>::quiet_NaN();
  double estimated_q = 0.0;
  std::size_t sample_count = 0;
  double p_lower = std::numeric_limits<double>::infinity(), p_upper = 0.0;
  std::vector<Witness> failures;
  nlohmann::json to_json() const;
};

DetectabilityReport check_detectability(const SystemModel& sys, const MetricField& metric,
                                        const RegionSampler& sampler, std::size_t n_samples,
                                        const DetectabilityOptions& opt = {});

// explicit sample list, used by the sampler overload
DetectabilityReport check_detectability_at(const SystemModel& sys, const MetricField& metric,
                                           const std::vector<Vec>& samples,
                                           const DetectabilityOptions& opt = {});

struct RatePair {
  double rho_bar = 0.0;
  double q_lower = 0.0;
};

// rho(x) is the least rho with L_f P + q P <= rho dh^T dh at q = q_lower
RatePair estimate_rate_pair(const SystemModel& sys, const MetricField& metric,
                            const RegionSampler& sampler, std::size_t n_samples);
RatePair estimate_rate_pair_at(const SystemModel& sys, const MetricField& metric,
                               const std::vector<Vec>& samples);
// per-point pieces, exposed for tests
double tangential_q_sup(const Mat& l, const Mat& p, const Mat& dh);
double rho_at(const Mat& l, const Mat& p, const Mat& dh, double q);

struct SplitReport {
  Classification classification = Classification::fails;
  double feasible_q = std::numeric_limits<double>::infinity();  // min over samples
  double max_dy_metric = 0.0;  // largest |dP_xixi/dy| seen; zero means y-independent
  std::size_t sample_count = 0;
  nlohmann::json to_json() const;
};

// samples are (y, xi) stacked
SplitReport check_split_condition(const SplitSystem& split,
                                  const std::function<Mat(const Vec&, const Vec&)>& p_xixi,
                                  const RegionSampler& sampler, std::size_t n_samples,
                                  double tolerance = 1e-8);
// the matrix whose quadratic form is the left side of the split condition
Mat split_condition_matrix(const SplitSystem& split,
                           const std::function<Mat(const Vec&, const Vec&)>& p_xixi,
                           const Vec& y, const Vec& xi);

}  // namespace riemobs
