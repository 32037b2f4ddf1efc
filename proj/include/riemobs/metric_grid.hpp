#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/riccati_metric.hpp"
#include "riemobs/system_model.hpp"

namespace riemobs {

struct GridAxis {
  std::string name;
  double min = 0.0, max = 0.0;
  int count = 1;
  double node(int i) const { return count == 1 ? min : min + (max - min) * i / (count - 1); }
};

// "name=min:max:count"
GridAxis parse_axis(const std::string& spec);

enum class Interpolation { nearest, multilinear };
// theta_omega: normalized oscillator coordinates, node state (cos t, sin t, 1)
// with lambda = omega. state: axes named x1..xn cover the state directly.
enum class GridParam { theta_omega, state };

struct NodeFailure {
  std::size_t index = 0;
  std::string reason;
};

class MetricGrid {
 public:
  std::vector<GridAxis> axes;
  int dim = 0;
  Interpolation interpolation = Interpolation::multilinear;
  GridParam param = GridParam::state;
  std::vector<double> values;  // dim(dim+1)/2 per node, NaN for failed nodes
  std::vector<NodeFailure> failures;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t node_count() const;
  std::size_t stride() const { return static_cast<std::size_t>(dim * (dim + 1) / 2); }
  std::vector<int> unravel(std::size_t idx) const;
  Vec node_coords(std::size_t idx) const;
  bool node_ok(std::size_t idx) const;
  Mat node_matrix(std::size_t idx) const;

  Mat interpolate(const Vec& coords) const;
  // derivative of the interpolant in grid coordinates (piecewise constant when multilinear)
  std::vector<Mat> interpolate_partials(const Vec& coords) const;

  std::string to_text() const;
  static MetricGrid from_text(const std::string& text);
  void write_file(const std::string& path) const;
  static MetricGrid read_file(const std::string& path);

  // smallest and largest eigenvalue over stored nodes
  std::pair<double, double> eigen_bounds() const;
};

// Evaluates compute_metric_at at every node on `workers` threads (0: hardware).
MetricGrid build_grid(const SystemModel& sys, const RiccatiConfig& cfg,
                      const std::vector<GridAxis>& axes, GridParam param,
                      Interpolation interp = Interpolation::multilinear, unsigned workers = 0);

nlohmann::json riccati_config_json(const RiccatiConfig& cfg);

Mat oscillator_scaled_lookup(const MetricGrid& grid, const Vec& x, double lambda);
// grid-backed field; partials by differencing the interpolant, flagged approximate
MetricField oscillator_grid_metric(const MetricGrid& grid, double lambda);
MetricField state_grid_metric(const MetricGrid& grid);

}  // namespace riemobs
