#include "riemobs/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "riemobs/detectability.hpp"
#include "riemobs/errors.hpp"
#include "riemobs/geodesic.hpp"
#include "riemobs/highgain_metric.hpp"
#include "riemobs/lagrangian_metric.hpp"
#include "riemobs/metric_grid.hpp"
#include "riemobs/observer.hpp"
#include "riemobs/riccati_metric.hpp"
#include "riemobs/system_model.hpp"

namespace riemobs {

using nlohmann::json;

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::Config, "config line " + std::to_string(lineno) + " has no '='");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::Config, "config line " + std::to_string(lineno) + " has no key");
    std::replace(key.begin(), key.end(), '_', '-');
    kv[key] = value;
  }
  return kv;
}

namespace {

// string-backed option store; typed parsing happens after CLI11 is done so
// every value has one canonical spelling for the output headers
class Params {
 public:
  void add(CLI::App* app, const std::string& key, const std::string& def, const std::string& help) {
    scalars_[key] = def;
    app->add_option("--" + key, scalars_[key], help)->capture_default_str();
  }
  void add_list(CLI::App* app, const std::string& key, const std::vector<std::string>& def,
                const std::string& help) {
    lists_[key] = def;
    app->add_option("--" + key, lists_[key], help)->capture_default_str();
  }

  std::string str(const std::string& key) const { return scalars_.at(key); }
  double num(const std::string& key) const { return to_number(key, str(key)); }
  int integer(const std::string& key) const {
    const double v = num(key);
    if (v != std::floor(v) || std::abs(v) > 1e9) throw Error(ErrorCode::Config, key + " must be an integer");
    return static_cast<int>(v);
  }
  bool flag(const std::string& key) const {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error(ErrorCode::Config, key + " must be true or false");
  }
  const std::vector<std::string>& list(const std::string& key) const { return lists_.at(key); }
  Vec vec(const std::string& key) const {
    std::vector<double> v;
    for (const auto& item : list(key))
      for (const auto& tok : split(item)) v.push_back(to_number(key, tok));
    if (v.empty()) throw Error(ErrorCode::Config, key + " needs at least one number");
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : scalars_) j[k] = v;
    for (const auto& [k, v] : lists_) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + v[i];
      j[k] = s;
    }
    return j;
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) {
      // "1,0,4" is accepted too
      std::stringstream parts(tok);
      std::string p;
      while (std::getline(parts, p, ','))
        if (!p.empty()) out.push_back(p);
    }
    return out;
  }

 private:
  static double to_number(const std::string& key, const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Config, key + " must be a number, got '" + s + "'");
    }
    if (used != s.size()) throw Error(ErrorCode::Config, key + " must be a number, got '" + s + "'");
    return v;
  }

  std::map<std::string, std::string> scalars_;
  std::map<std::string, std::vector<std::string>> lists_;
};

struct Globals {
  std::string seed = "0";
  std::string out;
  std::string config;
};

struct Context {
  std::string command;
  const Globals* globals = nullptr;
  const Params* params = nullptr;
  std::ostream* out = nullptr;

  std::uint64_t seed() const {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(globals->seed, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != globals->seed.size() || v < 0) throw Error(ErrorCode::Config, "seed must be a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }
  std::string out_path(const std::string& fallback) const {
    return globals->out.empty() ? fallback : globals->out;
  }
  json run_config() const {
    json j;
    j["command"] = command;
    j["seed"] = globals->seed;
    j["out"] = globals->out;
    j["config"] = globals->config;
    j["params"] = params->to_json();
    return j;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Config, "cannot write " + path);
  f << text;
}

std::string fmt(double v) { return format_number(v); }

void require_positive(const Params& p, const std::string& key) {
  if (!(p.num(key) > 0.0)) throw Error(ErrorCode::Config, key + " must be positive");
}

IntegratorSettings integrator_from(const Params& p, double tol) {
  IntegratorSettings s;
  const std::string m = p.str("integrator");
  if (m == "adaptive") {
    s.method = Integrator::adaptive_rk45;
  } else if (m == "fixed") {
    s.method = Integrator::fixed_rk4;
  } else {
    throw Error(ErrorCode::Config, "integrator must be adaptive or fixed");
  }
  s.rtol = tol;
  s.atol = 1e-3 * tol;
  s.fixed_step = p.num("step");
  if (!(s.fixed_step > 0.0)) throw Error(ErrorCode::Config, "step must be positive");
  return s;
}

RegionSampler region_from(const SystemModel& sys, const Params& p, std::uint64_t seed) {
  if (sys.name() == "harmonic_oscillator")
    return oscillator_region(p.num("x3-min"), p.num("x3-max"), p.num("r2-min"), p.num("r2-max"), seed);
  RegionSampler s;
  const int n = sys.state_dim();
  const double b = p.num("box");
  s.lo = Vec::Constant(n, -b);
  s.hi = Vec::Constant(n, b);
  s.seed = seed;
  return s;
}

void add_region_options(Params& p, CLI::App* app) {
  p.add(app, "x3-min", "1", "oscillator region: smallest x3");
  p.add(app, "x3-max", "10", "oscillator region: largest x3");
  p.add(app, "r2-min", "0.1", "oscillator region: smallest x1^2 + x2^2");
  p.add(app, "r2-max", "10", "oscillator region: largest x1^2 + x2^2");
  p.add(app, "box", "2", "other models: half-width of the sampling box");
}

struct HighGainBundle {
  ImmersionData imm;
  LmiCertificate cert;
  MetricField metric;
};

HighGainBundle build_highgain(const SystemModel& sys, const Params& p, std::uint64_t seed) {
  const int order = p.integer("order");
  const int samples = p.integer("nu-samples");
  if (order < 1) throw Error(ErrorCode::Config, "order must be positive");
  if (samples < 1) throw Error(ErrorCode::Config, "nu-samples must be positive");
  const auto pts = region_from(sys, p, seed).draw(static_cast<std::size_t>(samples));
  HighGainBundle b;
  b.imm = build_immersion(sys, order, pts, p.num("safety"));
  b.cert = solve_lmi(order, sys.output_dim(), b.imm.nu);
  b.metric = immersion_metric(b.imm, b.cert);
  return b;
}

// builds the metric named by --metric for `sys`; grid files are read here
MetricField named_metric(const std::string& name, const SystemModel& sys, const Params& p,
                         std::uint64_t seed, json* info) {
  if (name == "lp1") {
    if (sys.name() != "harmonic_oscillator") throw Error(ErrorCode::Config, "lp1 metric is defined for harmonic_oscillator");
    return oscillator_weak_metric(p.num("k"), p.num("ell"));
  }
  if (name == "analytic") {
    require_positive(p, "lambda");
    if (sys.state_dim() != 3) throw Error(ErrorCode::Config, "metric dimension 3 does not match state dimension " + std::to_string(sys.state_dim()));
    return oscillator_analytic_metric(p.num("lambda"));
  }
  if (name == "identity") return constant_metric(Mat::Identity(sys.state_dim(), sys.state_dim()), "identity");
  if (name == "grid") {
    const std::string file = p.str("grid-file");
    if (file.empty()) throw Error(ErrorCode::Config, "grid metric needs --grid-file");
    auto grid = MetricGrid::read_file(file);
    if (grid.dim != sys.state_dim())
      throw Error(ErrorCode::Config, "metric dimension " + std::to_string(grid.dim) +
                                          " does not match state dimension " + std::to_string(sys.state_dim()));
    if (info) (*info)["grid_file"] = file;
    if (grid.param == GridParam::theta_omega) {
      require_positive(p, "lambda");
      return oscillator_grid_metric(grid, p.num("lambda"));
    }
    return state_grid_metric(grid);
  }
  if (name == "highgain") {
    auto b = build_highgain(sys, p, seed);
    if (info) (*info)["certificate"] = b.cert.to_json();
    return b.metric;
  }
  throw Error(ErrorCode::Config, "unknown metric '" + name + "'");
}

// ---- metric riccati / grammian ----

int cmd_metric_grid(const Context& c, bool grammian_only) {
  const Params& p = *c.params;
  require_positive(p, "lambda");
  require_positive(p, "tol");
  const SystemModel sys = model_by_name(p.str("model"));

  RiccatiConfig cfg;
  cfg.variant = grammian_only ? RiccatiVariant::grammian_finite_t : parse_variant(p.str("variant"));
  cfg.lambda = p.num("lambda");
  cfg.adaptive_tol = p.num("tol");
  cfg.p_lower_init = p.num("p-lower");
  if (!(cfg.p_lower_init > 0.0)) throw Error(ErrorCode::Config, "p-lower must be positive");
  const double horizon = p.num("horizon");
  if (horizon < 0.0) throw Error(ErrorCode::Config, "horizon must be non-negative");
  if (horizon > 0.0) cfg.horizon = horizon;
  const double q = p.num("q");
  if (!(q > 0.0)) throw Error(ErrorCode::Config, "q must be positive");
  const int n = sys.state_dim();
  cfg.q_tensor = [q, n](const Vec&) { return Mat(q * Mat::Identity(n, n)); };
  cfg.q_description = fmt(q) + " I";
  cfg.integ = integrator_from(p, std::min(1e-10, 1e-4 * cfg.adaptive_tol));

  std::vector<GridAxis> axes;
  for (const auto& s : p.list("grid")) axes.push_back(parse_axis(s));
  GridParam param;
  if (p.str("param") == "theta_omega") {
    param = GridParam::theta_omega;
  } else if (p.str("param") == "state") {
    param = GridParam::state;
  } else {
    throw Error(ErrorCode::Config, "param must be theta_omega or state");
  }
  Interpolation interp;
  if (p.str("interp") == "multilinear") {
    interp = Interpolation::multilinear;
  } else if (p.str("interp") == "nearest") {
    interp = Interpolation::nearest;
  } else {
    throw Error(ErrorCode::Config, "interp must be multilinear or nearest");
  }
  const int workers = p.integer("workers");
  if (workers < 0) throw Error(ErrorCode::Config, "workers must be non-negative");

  MetricGrid grid = build_grid(sys, cfg, axes, param, interp, static_cast<unsigned>(workers));
  grid.provenance["run_config"] = c.run_config();

  std::ostream& os = *c.out;
  const auto [lo, hi] = grid.eigen_bounds();
  os << "nodes " << grid.node_count() << "\n";
  os << "failed_nodes " << grid.failures.size() << "\n";
  os << "min_eigenvalue " << fmt(lo) << "\n";
  os << "max_eigenvalue " << fmt(hi) << "\n";
  // the lambda-weighted flow has a closed form on the oscillator
  const bool closed_form = sys.name() == "harmonic_oscillator" &&
                           (cfg.variant == RiccatiVariant::lambda_linear ||
                            cfg.variant == RiccatiVariant::grammian_finite_t) &&
                           !cfg.horizon;
  if (closed_form) {
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.node_count(); ++i) {
      if (!grid.node_ok(i)) continue;
      Vec x;
      double lam = cfg.lambda;
      const Vec g = grid.node_coords(i);
      if (param == GridParam::theta_omega) {
        x = Vec((Vec(3) << std::cos(g(0)), std::sin(g(0)), 1.0).finished());
        lam = g(1);
      } else {
        x = g;
        if (!sys.in_domain(x)) continue;
      }
      const Mat ref = oscillator_analytic_metric(lam).eval(x);
      const Mat got = grid.node_matrix(i);
      const double scale = ref.cwiseAbs().maxCoeff();
      worst = std::max(worst, (got - ref).cwiseAbs().maxCoeff() / scale);
    }
    os << "closed_form_max_rel_diff " << fmt(worst) << "\n";
  }
  const std::string path = c.out_path("metric_grid.json");
  grid.write_file(path);
  os << "wrote " << path << "\n";
  return 0;
}

// ---- metric highgain ----

int cmd_metric_highgain(const Context& c) {
  const Params& p = *c.params;
  const SystemModel sys = model_by_name(p.str("model"));
  const auto b = build_highgain(sys, p, c.seed());
  const ResidualCheck rc = verify_certificate(b.cert);
  DetectabilityOptions opt;
  opt.seed = c.seed();
  opt.margin = p.num("margin");
  const int checks = p.integer("samples");
  if (checks < 1) throw Error(ErrorCode::Config, "samples must be positive");
  const auto det = check_detectability(sys, b.metric, region_from(sys, p, c.seed() + 1),
                                       static_cast<std::size_t>(checks), opt);
  json j;
  j["run_config"] = c.run_config();
  j["certificate"] = b.cert.to_json();
  j["verification"] = {{"max_eig_equilibrated", rc.max_eig_equilibrated},
                       {"max_eig_raw", rc.max_eig_raw},
                       {"negative_definite", rc.negative_definite}};
  j["immersion"] = {{"order", b.imm.order},       {"nu", b.imm.nu},
                    {"nu_sampled", b.imm.nu_sampled}, {"safety", b.imm.safety},
                    {"h_lower", b.imm.h_lower}, {"h_upper", b.imm.h_upper},
                    {"samples", b.imm.sample_count}};
  j["decay_margin"] = decay_margin(b.imm, b.cert);
  j["detectability"] = det.to_json();

  std::ostream& os = *c.out;
  os << "nu " << fmt(b.imm.nu) << "\n";
  os << "gain " << fmt(b.cert.gain) << "\n";
  os << "residual_max_eig " << fmt(rc.max_eig_equilibrated) << "\n";
  os << "negative_definite " << (rc.negative_definite ? "true" : "false") << "\n";
  os << "classification " << classification_name(det.classification) << "\n";
  const std::string path = c.out_path("highgain.json");
  write_text(path, j.dump(2) + "\n");
  os << "wrote " << path << "\n";
  return 0;
}

// ---- metric sasaki ----

int cmd_metric_sasaki(const Context& c) {
  const Params& p = *c.params;
  SasakiWeights w{p.num("a"), p.num("b"), p.num("c")};
  validate_weights(w);
  const LagrangianSystem lag = lagrangian_by_name(p.str("model"), w);
  const SystemModel sys = euler_lagrange_dynamics(lag);
  const int samples = p.integer("samples");
  if (samples < 1) throw Error(ErrorCode::Config, "samples must be positive");
  RegionSampler box;
  const double b = p.num("box");
  box.lo = Vec::Constant(2 * lag.config_dim, -b);
  box.hi = Vec::Constant(2 * lag.config_dim, b);
  box.seed = c.seed();
  const auto pts = box.draw(static_cast<std::size_t>(samples));
  const TangentialReport tr = verify_tangential_identity(lag, pts);
  const MetricField metric = sasaki_metric(lag);
  DetectabilityOptions opt;
  opt.seed = c.seed();
  const auto det = check_detectability_at(sys, metric, pts, opt);

  json j;
  j["run_config"] = c.run_config();
  j["model"] = lag.name;
  j["weights"] = {{"a", w.a}, {"b", w.b}, {"c", w.c}};
  j["positive_definite"] = tr.all_positive_definite;
  j["tangential"] = {{"samples", tr.samples},
                     {"max_abs_deviation", tr.max_abs_deviation},
                     {"worst_tangential", tr.worst_tangential}};
  j["metric_bounds"] = {{"p_lower", det.p_lower}, {"p_upper", det.p_upper}};
  j["detectability"] = det.to_json();

  std::ostream& os = *c.out;
  os << "positive_definite " << (tr.all_positive_definite ? "true" : "false") << "\n";
  os << "tangential_max_abs_deviation " << fmt(tr.max_abs_deviation) << "\n";
  os << "classification " << classification_name(det.classification) << "\n";
  const std::string path = c.out_path("sasaki.json");
  write_text(path, j.dump(2) + "\n");
  os << "wrote " << path << "\n";
  return 0;
}

// ---- check ----

int cmd_check(const Context& c) {
  const Params& p = *c.params;
  const std::string mname = p.str("metric");
  SystemModel sys;
  MetricField metric;
  json info = json::object();
  std::vector<Vec> pts;
  const int samples = p.integer("samples");
  if (samples < 1) throw Error(ErrorCode::Config, "samples must be positive");

  if (mname == "sasaki") {
    SasakiWeights w{p.num("a"), p.num("b"), p.num("c")};
    validate_weights(w);
    const auto lag = lagrangian_by_name(p.str("model"), w);
    sys = euler_lagrange_dynamics(lag);
    metric = sasaki_metric(lag);
  } else {
    sys = model_by_name(p.str("model"));
    metric = named_metric(mname, sys, p, c.seed(), &info);
  }
  if (metric.dim() != sys.state_dim())
    throw Error(ErrorCode::Config, "metric dimension " + std::to_string(metric.dim()) +
                                        " does not match state dimension " + std::to_string(sys.state_dim()));

  RegionSampler region = region_from(sys, p, c.seed());
  if (mname == "grid" && sys.name() == "harmonic_oscillator") {
    // keep lambda / sqrt(x3) inside the omega axis of the grid
    const auto grid = MetricGrid::read_file(p.str("grid-file"));
    if (grid.param == GridParam::theta_omega) {
      const double lam = p.num("lambda");
      const double lo = std::pow(lam / grid.axes[1].max, 2), hi = std::pow(lam / grid.axes[1].min, 2);
      region.lo(2) = std::max(region.lo(2), lo);
      region.hi(2) = std::min(region.hi(2), hi);
      if (!(region.hi(2) > region.lo(2)))
        throw Error(ErrorCode::Config, "sample region does not meet the grid's omega range");
    }
  }
  DetectabilityOptions opt;
  opt.seed = c.seed();
  opt.margin = p.num("margin");
  opt.tolerance = p.num("tolerance");
  const auto rep = check_detectability(sys, metric, region, static_cast<std::size_t>(samples), opt);

  json j;
  j["run_config"] = c.run_config();
  j["model"] = sys.name();
  j["metric"] = mname;
  j["metric_info"] = info;
  j["report"] = rep.to_json();
  std::ostream& os = *c.out;
  os << "classification " << classification_name(rep.classification) << "\n";
  os << "worst_ratio " << fmt(rep.worst_ratio) << "\n";
  if (!c.globals->out.empty()) {
    write_text(c.globals->out, j.dump(2) + "\n");
    os << "wrote " << c.globals->out << "\n";
  }
  switch (rep.classification) {
    case Classification::strong: return 0;
    case Classification::weak: return 1;
    case Classification::fails: return 4;
  }
  return 4;
}

// ---- simulate ----

std::vector<std::string> header_lines(const json& rc, const std::string& role) {
  return {"run_config " + rc.dump(), "trace " + role};
}

ObserverSpec observer_spec(const std::string& kind_name, const std::string& metric_name,
                           const SystemModel& sys, const Params& p, std::uint64_t seed) {
  ObserverSpec spec;
  spec.kind = parse_observer_kind(kind_name);
  spec.gain_k = p.num("gain");
  if (!(spec.gain_k > 0.0)) throw Error(ErrorCode::Config, "gain must be positive");
  const int n = sys.state_dim();
  const double q = p.num("q");
  if (!(q > 0.0)) throw Error(ErrorCode::Config, "q must be positive");
  spec.q_tensor = [q, n](const Vec&) { return Mat(q * Mat::Identity(n, n)); };
  spec.kleinman_horizon = p.num("kleinman-horizon");
  if (!(spec.kleinman_horizon > 0.0)) throw Error(ErrorCode::Config, "kleinman-horizon must be positive");
  spec.kleinman_integ.rtol = 1e-9;
  spec.kleinman_integ.atol = 1e-12;
  if (spec.kind == ObserverKind::reduced_order) {
    if (sys.name() != "harmonic_oscillator") throw Error(ErrorCode::Config, "reduced-order observer is bundled for harmonic_oscillator");
    spec.split = oscillator_split(p.num("k"), p.num("ell"));
    spec.metric = oscillator_weak_metric(p.num("k"), p.num("ell"));
  } else if (spec.kind == ObserverKind::full_order || metric_name != "none") {
    spec.metric = named_metric(metric_name, sys, p, seed, nullptr);
    if (spec.metric.dim() != n)
      throw Error(ErrorCode::Config, "metric dimension " + std::to_string(spec.metric.dim()) +
                                          " does not match state dimension " + std::to_string(n));
  }
  return spec;
}

int cmd_simulate(const Context& c) {
  const Params& p = *c.params;
  const SystemModel sys = model_by_name(p.str("model"));
  const Vec x0 = p.vec("x0"), xhat0 = p.vec("xhat0");
  if (x0.size() != sys.state_dim())
    throw Error(ErrorCode::Config, "x0 has " + std::to_string(x0.size()) + " entries, state dimension is " +
                                        std::to_string(sys.state_dim()));
  const std::string kind = p.str("observer");
  const ObserverSpec spec = observer_spec(kind, p.str("metric"), sys, p, c.seed());
  if (spec.kind != ObserverKind::reduced_order && xhat0.size() != sys.state_dim())
    throw Error(ErrorCode::Config, "xhat0 has " + std::to_string(xhat0.size()) +
                                        " entries, state dimension is " + std::to_string(sys.state_dim()));
  if (spec.kind == ObserverKind::reduced_order && xhat0.size() != sys.state_dim() &&
      xhat0.size() != sys.state_dim() - sys.output_dim())
    throw Error(ErrorCode::Config, "xhat0 must hold a full state or the unmeasured coordinates");

  const double t_end = p.num("t-end"), dt = p.num("sample-dt");
  if (!(t_end > 0.0)) throw Error(ErrorCode::Config, "t-end must be positive");
  if (!(dt > 0.0)) throw Error(ErrorCode::Config, "sample-dt must be positive");
  SimulationOptions opt;
  opt.integ = integrator_from(p, p.num("tol"));
  const bool riem = p.flag("riemannian");

  const json rc = c.run_config();
  std::ostream& os = *c.out;
  auto run = [&](const ObserverSpec& s, const std::string& role, const std::string& path) {
    const SimulationTrace tr = simulate(sys, s, x0, xhat0, t_end, dt, riem, opt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::Config, "cannot write " + path);
    write_trace_csv(tr, f, header_lines(rc, role));
    os << role << "_final_error " << fmt(tr.error_euclidean.back()) << "\n";
    os << role << "_completed " << (tr.completed ? "true" : "false") << "\n";
    os << "wrote " << path << "\n";
    return tr;
  };
  const std::string path = c.out_path("trace.csv");
  const SimulationTrace main_trace = run(spec, "primary", path);

  const std::string baseline = p.str("baseline");
  if (baseline != "none") {
    ObserverSpec bspec;
    if (baseline == "ekf" || baseline == "kleinman") {
      bspec = observer_spec(baseline, "none", sys, p, c.seed());
    } else if (baseline == "analytic") {
      bspec = spec;
      bspec.metric = named_metric("analytic", sys, p, c.seed(), nullptr);
    } else {
      throw Error(ErrorCode::Config, "baseline must be none, ekf, kleinman or analytic");
    }
    std::string bpath = p.str("baseline-out");
    if (bpath.empty()) bpath = path + ".baseline.csv";
    const SimulationTrace bt = run(bspec, "baseline", bpath);
    double sup = 0.0;
    const std::size_t m = std::min(bt.times.size(), main_trace.times.size());
    for (std::size_t i = 0; i < m; ++i)
      sup = std::max(sup, (bt.observer_states[i] - main_trace.observer_states[i]).cwiseAbs().maxCoeff());
    os << "sup_estimate_difference " << fmt(sup) << "\n";
  }
  return main_trace.completed ? 0 : 3;
}

// ---- distance ----

int cmd_distance(const Context& c) {
  const Params& p = *c.params;
  const Vec xa = p.vec("xa"), xb = p.vec("xb");
  if (xa.size() != xb.size()) throw Error(ErrorCode::Config, "xa and xb have different dimensions");
  const std::string name = p.str("metric");
  MetricField metric;
  if (name == "exp") {
    metric = MetricField(1, MetricKind::closed_form,
                         [](const Vec& q) { return Mat(Mat::Constant(1, 1, std::exp(-2.0 * q(0)))); },
                         [](const Vec& q) {
                           return std::vector<Mat>{Mat::Constant(1, 1, -2.0 * std::exp(-2.0 * q(0)))};
                         },
                         "exp_metric");
  } else if (name == "identity") {
    metric = constant_metric(Mat::Identity(xa.size(), xa.size()), "identity");
  } else {
    const SystemModel sys = model_by_name(p.str("model"));
    metric = named_metric(name, sys, p, c.seed(), nullptr);
  }
  if (metric.dim() != xa.size())
    throw Error(ErrorCode::Config, "metric dimension " + std::to_string(metric.dim()) +
                                        " does not match point dimension " + std::to_string(xa.size()));
  GeodesicOptions g;
  g.tol = p.num("tol");
  g.steps = p.integer("steps");
  if (!(g.tol > 0.0) || g.steps < 1) throw Error(ErrorCode::Config, "tol and steps must be positive");
  const GeodesicResult r = geodesic_shoot(metric, xa, xb, g);
  std::ostream& os = *c.out;
  os << "distance " << fmt(r.length) << "\n";
  os << "converged " << (r.converged ? "true" : "false") << "\n";
  os << "shooting_residual " << fmt(r.shooting_residual) << "\n";
  if (!c.globals->out.empty()) {
    json j;
    j["run_config"] = c.run_config();
    j["distance"] = r.length;
    j["converged"] = r.converged;
    j["shooting_residual"] = r.shooting_residual;
    j["iterations"] = r.iterations;
    j["multiple_shooting"] = r.multiple_shooting;
    write_text(c.globals->out, j.dump(2) + "\n");
    os << "wrote " << c.globals->out << "\n";
  }
  return r.converged ? 0 : 3;
}

// appends "--key value..." for config entries not already given as flags
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Config, "cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::vector<std::string> merged = args;
  for (const auto& [key, value] : parse_config_text(ss.str())) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) continue;
    merged.push_back(flag);
    for (const auto& tok : Params::split(value)) merged.push_back(tok);
  }
  return merged;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Riemannian metric design and observer simulation"};
  app.name("riemobs");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "seed for sample points and random directions")->capture_default_str();
  app.add_option("--out", g.out, "output file");
  app.add_option("--config", g.config, "flat key = value file; flags win over file entries");

  // one Params per leaf command; the chosen one is serialized into the outputs
  std::map<std::string, Params> params;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& help) {
    CLI::App* sc = parent->add_subcommand(name, help);
    sc->fallthrough();
    return sc;
  };

  CLI::App* metric = app.add_subcommand("metric", "build a metric");
  metric->fallthrough();
  metric->require_subcommand(1);
  for (const std::string kind : {"riccati", "grammian"}) {
    CLI::App* sc = leaf(metric, kind, kind == "riccati" ? "flow-based metric on a grid" : "weighted observability Grammian on a grid");
    Params& p = params["metric " + kind];
    p.add(sc, "model", "harmonic_oscillator", "bundled system");
    if (kind == "riccati") p.add(sc, "variant", "lambda", "lambda | riccati | radon | grammian");
    p.add(sc, "lambda", "8", "weighting rate");
    p.add(sc, "q", "1", "Q = q I for the riccati and radon variants");
    p.add(sc, "horizon", "0", "fixed horizon; 0 doubles until converged");
    p.add(sc, "tol", "1e-6", "relative increment that stops horizon doubling");
    p.add(sc, "p-lower", "1e-3", "initial Pi = p-lower I");
    p.add_list(sc, "grid", {"theta=-3.14159265358979:3.14159265358979:36", "omega=4:7:10"},
               "axes name=min:max:count");
    p.add(sc, "param", "theta_omega", "theta_omega | state");
    p.add(sc, "interp", "multilinear", "multilinear | nearest");
    p.add(sc, "integrator", "adaptive", "adaptive | fixed");
    p.add(sc, "step", "1e-3", "fixed step");
    p.add(sc, "workers", "0", "threads, 0 for all cores");
  }
  {
    CLI::App* sc = leaf(metric, "highgain", "immersion-induced metric with an LMI certificate");
    Params& p = params["metric highgain"];
    p.add(sc, "model", "harmonic_oscillator", "bundled system");
    p.add(sc, "order", "4", "number of stacked Lie derivatives");
    p.add(sc, "nu-samples", "400", "points used to estimate nu");
    p.add(sc, "safety", "2", "nu is divided by this");
    p.add(sc, "samples", "100", "points for the detectability check");
    p.add(sc, "margin", "1e-8", "strictness margin of the check");
    add_region_options(p, sc);
  }
  {
    CLI::App* sc = leaf(metric, "sasaki", "modified Sasaki metric of a Lagrangian system");
    Params& p = params["metric sasaki"];
    p.add(sc, "model", "lagrangian_toy", "lagrangian_toy | exp_metric_toy | warped_plane");
    p.add(sc, "a", "1", "weight a");
    p.add(sc, "b", "1", "weight b");
    p.add(sc, "c", "0.5", "weight c, c^2 < ab");
    p.add(sc, "samples", "50", "sample points (q, v)");
    p.add(sc, "box", "2", "half-width of the sample box");
  }
  {
    CLI::App* sc = leaf(&app, "check", "classify differential detectability");
    Params& p = params["check"];
    p.add(sc, "model", "harmonic_oscillator", "bundled system");
    p.add(sc, "metric", "analytic", "lp1 | analytic | highgain | sasaki | grid | identity");
    p.add(sc, "k", "1", "lp1/split parameter k");
    p.add(sc, "ell", "1", "lp1/split parameter ell");
    p.add(sc, "lambda", "8", "analytic or grid metric rate");
    p.add(sc, "grid-file", "", "grid metric file");
    p.add(sc, "samples", "100", "sample points");
    p.add(sc, "margin", "1e-8", "strict side margin");
    p.add(sc, "tolerance", "1e-8", "weak side tolerance");
    p.add(sc, "order", "4", "highgain: stacked Lie derivatives");
    p.add(sc, "nu-samples", "400", "highgain: points used to estimate nu");
    p.add(sc, "safety", "2", "highgain: nu safety factor");
    p.add(sc, "a", "1", "sasaki weight a");
    p.add(sc, "b", "1", "sasaki weight b");
    p.add(sc, "c", "0.5", "sasaki weight c");
    add_region_options(p, sc);
  }
  {
    CLI::App* sc = leaf(&app, "simulate", "run an observer against the plant");
    Params& p = params["simulate"];
    p.add(sc, "model", "harmonic_oscillator", "bundled system");
    p.add(sc, "observer", "full", "full | reduced | ekf | kleinman");
    p.add(sc, "metric", "analytic", "analytic | grid | lp1 | highgain | identity");
    p.add(sc, "grid-file", "", "grid metric file");
    p.add(sc, "lambda", "8", "analytic or grid metric rate");
    p.add(sc, "k", "1", "lp1/split parameter k");
    p.add(sc, "ell", "1", "lp1/split parameter ell");
    p.add(sc, "gain", "1", "observer gain k_E");
    p.add(sc, "q", "1", "EKF Q = q I");
    p.add(sc, "kleinman-horizon", "1", "Kleinman Grammian window");
    p.add_list(sc, "x0", {"1", "0", "4"}, "plant initial state");
    p.add_list(sc, "xhat0", {"1.05", "0.05", "3.95"}, "observer initial state");
    p.add(sc, "t-end", "20", "final time");
    p.add(sc, "sample-dt", "0.05", "output interval");
    p.add(sc, "integrator", "fixed", "fixed | adaptive");
    p.add(sc, "step", "1e-3", "fixed step");
    p.add(sc, "tol", "1e-10", "adaptive tolerance");
    p.add(sc, "riemannian", "false", "also record the geodesic distance");
    p.add(sc, "baseline", "none", "none | ekf | kleinman | analytic");
    p.add(sc, "baseline-out", "", "second trace file");
    p.add(sc, "order", "4", "highgain: stacked Lie derivatives");
    p.add(sc, "nu-samples", "400", "highgain: points used to estimate nu");
    p.add(sc, "safety", "2", "highgain: nu safety factor");
    add_region_options(p, sc);
  }
  {
    CLI::App* sc = leaf(&app, "distance", "geodesic distance between two points");
    Params& p = params["distance"];
    p.add(sc, "model", "harmonic_oscillator", "system for model-bound metrics");
    p.add(sc, "metric", "identity", "identity | exp | analytic | lp1 | grid");
    p.add(sc, "lambda", "8", "analytic or grid metric rate");
    p.add(sc, "k", "1", "lp1 parameter k");
    p.add(sc, "ell", "1", "lp1 parameter ell");
    p.add(sc, "grid-file", "", "grid metric file");
    p.add_list(sc, "xa", {"0"}, "first point");
    p.add_list(sc, "xb", {"1"}, "second point");
    p.add(sc, "tol", "1e-10", "endpoint tolerance");
    p.add(sc, "steps", "128", "RK4 steps along the geodesic");
  }

  try {
    std::vector<std::string> merged = merge_config(args);
    std::reverse(merged.begin(), merged.end());  // CLI11 consumes from the back
    app.parse(merged);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  Context ctx;
  ctx.globals = &g;
  ctx.out = &out;
  try {
    if (metric->parsed()) {
      for (const std::string kind : {"riccati", "grammian", "highgain", "sasaki"}) {
        if (!metric->get_subcommand(kind)->parsed()) continue;
        ctx.command = "metric " + kind;
        ctx.params = &params.at(ctx.command);
        if (kind == "highgain") return cmd_metric_highgain(ctx);
        if (kind == "sasaki") return cmd_metric_sasaki(ctx);
        return cmd_metric_grid(ctx, kind == "grammian");
      }
    }
    for (const std::string cmd : {"check", "simulate", "distance"}) {
      if (!app.get_subcommand(cmd)->parsed()) continue;
      ctx.command = cmd;
      ctx.params = &params.at(cmd);
      if (cmd == "check") return cmd_check(ctx);
      if (cmd == "simulate") return cmd_simulate(ctx);
      return cmd_distance(ctx);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    const bool config = e.code() == ErrorCode::Config || e.code() == ErrorCode::WeightsInvalid;
    return config ? 2 : 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  err << "error: no command\n";
  return 2;
}

}  // namespace riemobs
