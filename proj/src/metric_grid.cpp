#include "riemobs/metric_grid.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <thread>

#include "riemobs/errors.hpp"

namespace riemobs {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const char* interp_name(Interpolation i) {
  return i == Interpolation::nearest ? "nearest" : "multilinear";
}

const char* param_name(GridParam p) { return p == GridParam::theta_omega ? "theta_omega" : "state"; }

struct AxisWeights {
  int lo = 0;
  double t = 0.0;  // weight of lo+1
  double inv_step = 0.0;
  bool single = false;
};

}  // namespace

GridAxis parse_axis(const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::Config, "axis spec needs name=min:max:count");
  GridAxis a;
  a.name = spec.substr(0, eq);
  std::stringstream ss(spec.substr(eq + 1));
  std::string p0, p1, p2;
  if (!std::getline(ss, p0, ':') || !std::getline(ss, p1, ':') || !std::getline(ss, p2))
    throw Error(ErrorCode::Config, "axis spec needs name=min:max:count");
  try {
    a.min = std::stod(p0);
    a.max = std::stod(p1);
    a.count = std::stoi(p2);
  } catch (const std::exception&) {
    throw Error(ErrorCode::Config, "bad number in axis spec '" + spec + "'");
  }
  if (a.count < 1) throw Error(ErrorCode::Config, "axis count must be positive");
  if (a.count > 1 && !(a.max > a.min)) throw Error(ErrorCode::Config, "axis max must exceed min");
  return a;
}

std::size_t MetricGrid::node_count() const {
  std::size_t c = 1;
  for (const auto& a : axes) c *= static_cast<std::size_t>(a.count);
  return c;
}

std::vector<int> MetricGrid::unravel(std::size_t idx) const {
  std::vector<int> out(axes.size());
  for (std::size_t k = axes.size(); k-- > 0;) {
    out[k] = static_cast<int>(idx % axes[k].count);
    idx /= axes[k].count;
  }
  return out;
}

Vec MetricGrid::node_coords(std::size_t idx) const {
  auto ii = unravel(idx);
  Vec c(static_cast<Eigen::Index>(axes.size()));
  for (std::size_t k = 0; k < axes.size(); ++k) c(k) = axes[k].node(ii[k]);
  return c;
}

bool MetricGrid::node_ok(std::size_t idx) const { return std::isfinite(values[idx * stride()]); }

Mat MetricGrid::node_matrix(std::size_t idx) const {
  if (!node_ok(idx)) throw Error(ErrorCode::GridOutOfRange, "grid node excluded from build");
  return unpack_lower(values.data() + idx * stride(), dim);
}

static std::vector<AxisWeights> locate(const MetricGrid& g, const Vec& coords) {
  if (coords.size() != static_cast<Eigen::Index>(g.axes.size()))
    throw Error(ErrorCode::DomainError, "grid coordinate dimension mismatch");
  std::vector<AxisWeights> w(g.axes.size());
  for (std::size_t k = 0; k < g.axes.size(); ++k) {
    const auto& a = g.axes[k];
    double c = coords(k);
    if (a.count == 1) {
      if (std::abs(c - a.min) > 1e-9 * (1.0 + std::abs(a.min)))
        throw Error(ErrorCode::GridOutOfRange, "coordinate off single-node axis " + a.name);
      w[k].single = true;
      continue;
    }
    const double eps = 1e-9 * (a.max - a.min);
    if (!(c >= a.min - eps && c <= a.max + eps))
      throw Error(ErrorCode::GridOutOfRange,
                  "axis " + a.name + " value " + fmt_double(c) + " outside [" + fmt_double(a.min) +
                      ", " + fmt_double(a.max) + "]");
    c = std::clamp(c, a.min, a.max);
    const double step = (a.max - a.min) / (a.count - 1);
    const double u = (c - a.min) / step;
    if (g.interpolation == Interpolation::nearest) {
      w[k].lo = std::clamp(static_cast<int>(std::lround(u)), 0, a.count - 1);
      w[k].single = true;
    } else {
      int i = std::clamp(static_cast<int>(std::floor(u)), 0, a.count - 2);
      w[k].lo = i;
      w[k].t = std::clamp(u - i, 0.0, 1.0);
      w[k].inv_step = 1.0 / step;
    }
  }
  return w;
}

namespace {

// visits the 2^d cell corners; weight(k) / dweight(k) per axis
template <class F>
void corners(const MetricGrid& g, const std::vector<AxisWeights>& w, F&& fn) {
  const std::size_t d = g.axes.size();
  const std::size_t nc = std::size_t{1} << d;
  for (std::size_t m = 0; m < nc; ++m) {
    bool skip = false;
    std::size_t idx = 0;
    std::vector<int> bits(d);
    for (std::size_t k = 0; k < d; ++k) {
      int b = (m >> k) & 1;
      if (w[k].single && b) {
        skip = true;
        break;
      }
      bits[k] = b;
      idx = idx * g.axes[k].count + (w[k].lo + b);
    }
    if (!skip) fn(idx, bits);
  }
}

}  // namespace

Mat MetricGrid::interpolate(const Vec& coords) const {
  auto w = locate(*this, coords);
  Mat out = Mat::Zero(dim, dim);
  corners(*this, w, [&](std::size_t idx, const std::vector<int>& bits) {
    double wt = 1.0;
    for (std::size_t k = 0; k < bits.size(); ++k)
      if (!w[k].single) wt *= bits[k] ? w[k].t : 1.0 - w[k].t;
    if (wt == 0.0) return;
    out += wt * node_matrix(idx);
  });
  return out;
}

std::vector<Mat> MetricGrid::interpolate_partials(const Vec& coords) const {
  std::vector<AxisWeights> w;
  try {
    w = locate(*this, coords);
  } catch (const Error& e) {
    throw Error(ErrorCode::PartialsUnavailable, e.what());
  }
  std::vector<Mat> out(axes.size(), Mat::Zero(dim, dim));
  if (interpolation == Interpolation::nearest) return out;
  corners(*this, w, [&](std::size_t idx, const std::vector<int>& bits) {
    for (std::size_t a = 0; a < axes.size(); ++a) {
      if (w[a].single) continue;
      double wt = bits[a] ? w[a].inv_step : -w[a].inv_step;
      for (std::size_t k = 0; k < bits.size(); ++k)
        if (k != a && !w[k].single) wt *= bits[k] ? w[k].t : 1.0 - w[k].t;
      if (wt != 0.0) out[a] += wt * node_matrix(idx);
    }
  });
  return out;
}

std::pair<double, double> MetricGrid::eigen_bounds() const {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < node_count(); ++i) {
    if (!node_ok(i)) continue;
    Mat m = node_matrix(i);
    lo = std::min(lo, min_eig(m));
    hi = std::max(hi, max_eig(m));
  }
  return {lo, hi};
}

std::string MetricGrid::to_text() const {
  json h = provenance;
  json ax = json::array();
  for (const auto& a : axes) ax.push_back({{"name", a.name}, {"min", a.min}, {"max", a.max}, {"count", a.count}});
  h["axes"] = ax;
  h["dim"] = dim;
  h["interpolation"] = interp_name(interpolation);
  h["parameterization"] = param_name(param);
  json f = json::array();
  for (const auto& nf : failures) f.push_back({{"index", nf.index}, {"reason", nf.reason}});
  h["failed_nodes"] = f;
  std::string out = "{\n\"header\": " + h.dump(2) + ",\n\"values\": [\n";
  const std::size_t s = stride(), nn = node_count();
  for (std::size_t i = 0; i < nn; ++i) {
    for (std::size_t k = 0; k < s; ++k) {
      out += fmt_double(values[i * s + k]);
      if (i + 1 < nn || k + 1 < s) out += ',';
    }
    out += '\n';
  }
  out += "]\n}\n";
  return out;
}

MetricGrid MetricGrid::from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("grid file is not valid: ") + e.what());
  }
  MetricGrid g;
  try {
    const json& h = j.at("header");
    g.provenance = h;
    for (const auto& a : h.at("axes"))
      g.axes.push_back({a.at("name").get<std::string>(), a.at("min").get<double>(),
                        a.at("max").get<double>(), a.at("count").get<int>()});
    g.dim = h.at("dim").get<int>();
    g.interpolation = h.at("interpolation").get<std::string>() == "nearest" ? Interpolation::nearest
                                                                            : Interpolation::multilinear;
    g.param = h.at("parameterization").get<std::string>() == "theta_omega" ? GridParam::theta_omega
                                                                           : GridParam::state;
    for (const auto& f : h.at("failed_nodes"))
      g.failures.push_back({f.at("index").get<std::size_t>(), f.at("reason").get<std::string>()});
    for (const auto& v : j.at("values"))
      g.values.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("grid file is missing fields: ") + e.what());
  }
  if (g.values.size() != g.node_count() * g.stride())
    throw Error(ErrorCode::Config, "grid file value count does not match axes");
  return g;
}

void MetricGrid::write_file(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Config, "cannot write " + path);
  f << to_text();
}

MetricGrid MetricGrid::read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Config, "cannot read grid file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

json riccati_config_json(const RiccatiConfig& cfg) {
  json j;
  j["variant"] = variant_name(cfg.variant);
  j["lambda"] = cfg.lambda;
  j["q_description"] = cfg.q_description;
  j["p_lower_init"] = cfg.p_lower_init;
  j["tol"] = cfg.adaptive_tol;
  if (cfg.horizon)
    j["horizon"] = *cfg.horizon;
  else
    j["horizon"] = "adaptive";
  j["integrator"] = {{"method", cfg.integ.method == Integrator::fixed_rk4 ? "fixed_rk4" : "adaptive_rk45"},
                     {"rtol", cfg.integ.rtol},
                     {"atol", cfg.integ.atol},
                     {"fixed_step", cfg.integ.fixed_step}};
  return j;
}

MetricGrid build_grid(const SystemModel& sys, const RiccatiConfig& cfg,
                      const std::vector<GridAxis>& axes, GridParam param, Interpolation interp,
                      unsigned workers) {
  MetricGrid g;
  g.axes = axes;
  g.dim = sys.state_dim();
  g.interpolation = interp;
  g.param = param;
  if (axes.empty()) throw Error(ErrorCode::Config, "grid needs at least one axis");
  if (param == GridParam::theta_omega) {
    if (g.dim != 3 || axes.size() != 2 || axes[0].name != "theta" || axes[1].name != "omega")
      throw Error(ErrorCode::Config, "theta_omega grids need a 3-state system and axes theta, omega");
    if (cfg.variant != RiccatiVariant::lambda_linear && cfg.variant != RiccatiVariant::grammian_finite_t)
      throw Error(ErrorCode::Config, "theta_omega grids need a lambda-weighted variant");
    if (!(axes[1].min > 0.0)) throw Error(ErrorCode::Config, "omega axis must be positive");
  } else {
    if (static_cast<int>(axes.size()) != g.dim)
      throw Error(ErrorCode::Config, "state grids need one axis per state coordinate");
    for (int k = 0; k < g.dim; ++k)
      if (axes[k].name != "x" + std::to_string(k + 1))
        throw Error(ErrorCode::Config, "state grid axes must be named x1..xn in order");
  }
  const std::size_t nn = g.node_count(), s = g.stride();
  g.values.assign(nn * s, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> reasons(nn);

  auto work = [&](std::size_t i) {
    Vec c = g.node_coords(i);
    RiccatiConfig local = cfg;
    Vec x;
    if (param == GridParam::theta_omega) {
      x = Vec(3);
      x << std::cos(c(0)), std::sin(c(0)), 1.0;
      local.lambda = c(1);
    } else {
      x = c;
    }
    try {
      Mat p = compute_metric_at(sys, local, x);
      if (!is_positive_definite(p)) {
        reasons[i] = "not positive definite";
        return;
      }
      auto pk = pack_lower(p);
      std::copy(pk.begin(), pk.end(), g.values.begin() + i * s);
    } catch (const Error& e) {
      reasons[i] = e.what();
    }
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, nn));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < nn;) work(i);
    });
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < nn; ++i)
    if (!reasons[i].empty()) g.failures.push_back({i, reasons[i]});
  if (g.failures.size() * 100 > nn)
    throw Error(ErrorCode::GridBuildFailed,
                std::to_string(g.failures.size()) + " of " + std::to_string(nn) +
                    " nodes failed; first: " + g.failures.front().reason);

  json prov = riccati_config_json(cfg);
  prov["system"] = sys.name();
  if (param == GridParam::theta_omega) prov["lambda"] = "omega per node";
  auto [lo, hi] = g.eigen_bounds();
  prov["bounds"] = {{"p_lower", lo}, {"p_upper", hi}, {"ratio", hi / lo}};
  g.provenance = prov;
  return g;
}

Mat oscillator_scaled_lookup(const MetricGrid& grid, const Vec& x, double lambda) {
  if (grid.param != GridParam::theta_omega)
    throw Error(ErrorCode::Config, "grid is not parameterized by (theta, omega)");
  if (!(x(2) > 0.0)) throw Error(ErrorCode::DomainError, "scaled lookup needs x3 > 0");
  const double x1 = x(0), x2 = x(1), x3 = x(2);
  const double sq = std::sqrt(x3);
  const double r = std::sqrt(x3 * x1 * x1 + x2 * x2);
  if (!(r > 0.0)) throw Error(ErrorCode::OriginSingularity, "scaled lookup undefined at x1=x2=0");
  double theta = std::atan2(x2, sq * x1);
  const auto& ta = grid.axes[0];
  // tolerate axis ends written with a truncated pi
  if (theta > ta.max && theta - ta.max < 1e-3) theta = ta.max;
  if (theta < ta.min && ta.min - theta < 1e-3) theta = ta.min;
  const double omega = lambda / sq;
  Vec c(2);
  c << theta, omega;
  const Mat pn = grid.interpolate(c);
  const double q = std::pow(x3, 0.25);
  Vec minv(3);
  minv << 1.0 / q, 1.0 / (sq * q), r / (x3 * sq * q);
  return minv.asDiagonal() * pn * minv.asDiagonal();
}

MetricField oscillator_grid_metric(const MetricGrid& grid, double lambda) {
  auto g = std::make_shared<const MetricGrid>(grid);
  auto eval = [g, lambda](const Vec& x) { return oscillator_scaled_lookup(*g, x, lambda); };
  MetricField m(3, MetricKind::grid_backed, eval, {}, "oscillator_grid");
  m.mark_partials_approximate();
  return m;
}

MetricField state_grid_metric(const MetricGrid& grid) {
  if (grid.param != GridParam::state) throw Error(ErrorCode::Config, "grid is not a state grid");
  auto g = std::make_shared<const MetricGrid>(grid);
  auto eval = [g](const Vec& x) { return g->interpolate(x); };
  auto part = [g](const Vec& x) { return g->interpolate_partials(x); };
  MetricField m(grid.dim, MetricKind::grid_backed, eval, part, "state_grid");
  m.mark_partials_approximate();
  return m;
}

}  // namespace riemobs
