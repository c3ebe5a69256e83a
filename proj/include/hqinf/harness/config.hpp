#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "hqinf/analytic_limits.hpp"
#include "hqinf/arrival_models.hpp"
#include "hqinf/queue_sim.hpp"
#include "hqinf/service_models.hpp"

namespace hqinf::harness {

enum class ExperimentKind {
  fwlln,
  fclt_variance,
  age_distribution,
  poisson_property,
  limit_path_validation,
  markov_check,
  workload
};

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::fwlln: return "fwlln";
    case ExperimentKind::fclt_variance: return "fclt_variance";
    case ExperimentKind::age_distribution: return "age_distribution";
    case ExperimentKind::poisson_property: return "poisson_property";
    case ExperimentKind::limit_path_validation: return "limit_path_validation";
    case ExperimentKind::markov_check: return "markov_check";
    case ExperimentKind::workload: return "workload";
  }
  return "?";
}

struct Tolerances {
  double fluid_abs = 0.05;
  double variance_rel = 0.10;
  double workload_abs = 0.07;
  double dispersion_abs = 0.1;
  double thinning_rel = 0.15;
  double age_abs = 0.05;
  double age_pass_fraction = 0.9;
  double component_rel = 0.15;
  double correlation_abs = 0.06;
  double skew_abs = 0.1;
  double kurtosis_abs = 0.2;
  double markov_factor = 5.0;
  double steady_state = 1e-6;
  double identity = 1e-9;
};

struct MarkovSpec {
  double t1 = 0.5, t2 = 1.0, y = 0.0;
  std::size_t residual_paths = 100;
};

struct InitSpec {
  InitialCondition condition;
  InitialLimitInputs limits() const {
    const double var = condition.count_law == InitialCondition::CountLaw::fixed ? 0.0 : condition.density;
    return {condition.density, var, condition.residual};
  }
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::fwlln;
  ArrivalModel arrival = ArrivalModel::poisson(1.0);
  ServiceModel service = ServiceModel::exponential(1.0);
  std::optional<InitSpec> init;
  std::vector<long> n_list{100};
  std::size_t replications = 200;
  std::size_t paths = 0;  // extra limit-path draws for the workload experiment
  Grid grid{{1.0}, {0.0}};
  std::size_t k = 200;
  std::uint64_t master_seed = 1;
  unsigned threads = 1;
  Tolerances tol;
  MarkovSpec markov;
  std::string echo;  // normalized source text

  LimitInputs limit_inputs() const {
    std::optional<InitialLimitInputs> li;
    if (init) li = init->limits();
    return LimitInputs::from(arrival, service, li);
  }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string where(const std::string& source, const YAML::Node& node) {
  std::ostringstream os;
  os << source;
  const YAML::Mark m = node.Mark();
  if (m.line >= 0) os << ':' << m.line + 1 << ':' << m.column + 1;
  return os.str();
}

struct Reader {
  std::string source;

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    throw ConfigError(where(source, node) + ": " + msg);
  }

  void expect_map(const YAML::Node& node, const std::string& what) const {
    if (!node.IsMap()) fail(node, what + " must be a mapping");
  }

  void only_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& what) const {
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + key + "' in " + what);
    }
  }

  const YAML::Node need(const YAML::Node& node, const std::string& key, const std::string& what) const {
    const YAML::Node v = node[key];
    if (!v) fail(node, what + ": missing key '" + key + "'");
    return v;
  }

  double num(const YAML::Node& node, const std::string& what) const {
    if (!node.IsScalar()) fail(node, what + " must be a number");
    try {
      return node.as<double>();
    } catch (const YAML::Exception&) {
      fail(node, what + " must be a number, got '" + node.Scalar() + "'");
    }
  }

  long integer(const YAML::Node& node, const std::string& what, long lo) const {
    if (!node.IsScalar()) fail(node, what + " must be an integer");
    long v;
    try {
      v = node.as<long>();
    } catch (const YAML::Exception&) {
      fail(node, what + " must be an integer, got '" + node.Scalar() + "'");
    }
    if (v < lo) fail(node, what + " must be >= " + std::to_string(lo));
    return v;
  }

  std::vector<double> numbers(const YAML::Node& node, const std::string& what) const {
    if (!node.IsSequence()) fail(node, what + " must be a list of numbers");
    std::vector<double> out;
    for (const auto& v : node) out.push_back(num(v, what));
    return out;
  }

  std::string str(const YAML::Node& node, const std::string& what) const {
    if (!node.IsScalar()) fail(node, what + " must be a string");
    return node.Scalar();
  }

  template <class F>
  auto guarded(const YAML::Node& node, F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(node, e.what());
    }
  }

  RateFunction rate(const YAML::Node& node) const {
    if (node.IsScalar()) {
      const double a = num(node, "rate");
      return guarded(node, [&] { return RateFunction::constant(a); });
    }
    expect_map(node, "rate function");
    const std::string kind = str(need(node, "kind", "rate function"), "rate kind");
    if (kind == "constant") {
      only_keys(node, {"kind", "a"}, "constant rate");
      const double a = num(need(node, "a", "constant rate"), "a");
      return guarded(node, [&] { return RateFunction::constant(a); });
    }
    if (kind == "linear") {
      only_keys(node, {"kind", "a", "b"}, "linear rate");
      const double a = num(need(node, "a", "linear rate"), "a"), b = num(need(node, "b", "linear rate"), "b");
      return guarded(node, [&] { return RateFunction::linear(a, b); });
    }
    if (kind == "sinusoidal") {
      only_keys(node, {"kind", "a", "b", "c", "d"}, "sinusoidal rate");
      const double a = num(need(node, "a", "sinusoidal rate"), "a"), b = num(need(node, "b", "sinusoidal rate"), "b");
      const double c = node["c"] ? num(node["c"], "c") : 1.0, d = node["d"] ? num(node["d"], "d") : 0.0;
      return guarded(node, [&] { return RateFunction::sinusoidal(a, b, c, d); });
    }
    fail(node, "unknown rate function kind '" + kind + "' (expected constant, linear, sinusoidal)");
  }

  ServiceModel service(const YAML::Node& node) const {
    expect_map(node, "distribution");
    const std::string kind = str(need(node, "kind", "distribution"), "distribution kind");
    auto p = [&](const char* key) { return num(need(node, key, kind), key); };
    if (kind == "exponential") {
      only_keys(node, {"kind", "rate"}, kind);
      const double r = p("rate");
      return guarded(node, [&] { return ServiceModel::exponential(r); });
    }
    if (kind == "deterministic") {
      only_keys(node, {"kind", "point"}, kind);
      const double x = p("point");
      return guarded(node, [&] { return ServiceModel::deterministic(x); });
    }
    if (kind == "uniform") {
      only_keys(node, {"kind", "a", "b"}, kind);
      const double a = p("a"), b = p("b");
      return guarded(node, [&] { return ServiceModel::uniform(a, b); });
    }
    if (kind == "lognormal") {
      only_keys(node, {"kind", "logmean", "logsd"}, kind);
      const double m = p("logmean"), s = p("logsd");
      return guarded(node, [&] { return ServiceModel::lognormal(m, s); });
    }
    if (kind == "hyperexponential") {
      only_keys(node, {"kind", "weights", "rates"}, kind);
      auto w = numbers(need(node, "weights", kind), "weights");
      auto r = numbers(need(node, "rates", kind), "rates");
      return guarded(node, [&] { return ServiceModel::hyperexponential(w, r); });
    }
    if (kind == "finite_atoms") {
      only_keys(node, {"kind", "atoms"}, kind);
      const YAML::Node list = need(node, "atoms", kind);
      if (!list.IsSequence()) fail(list, "atoms must be a list of {point, mass}");
      std::vector<Atom> atoms;
      for (const auto& a : list) {
        expect_map(a, "atom");
        only_keys(a, {"point", "mass"}, "atom");
        atoms.push_back({num(need(a, "point", "atom"), "point"), num(need(a, "mass", "atom"), "mass")});
      }
      return guarded(node, [&] { return ServiceModel::finite_atoms(atoms); });
    }
    if (kind == "pareto") {
      only_keys(node, {"kind", "shape", "scale"}, kind);
      const double a = p("shape"), s = p("scale");
      return guarded(node, [&] { return ServiceModel::pareto(a, s); });
    }
    if (kind == "mixture") {
      only_keys(node, {"kind", "weight", "continuous", "atomic"}, kind);
      const double w = p("weight");
      ServiceModel c = service(need(node, "continuous", kind));
      ServiceModel a = service(need(node, "atomic", kind));
      return guarded(node, [&] { return ServiceModel::mixture(w, c, a); });
    }
    fail(node, "unknown distribution kind '" + kind +
                   "' (expected exponential, deterministic, uniform, lognormal, hyperexponential, finite_atoms, "
                   "pareto, mixture)");
  }

  ArrivalModel arrival(const YAML::Node& node) const {
    expect_map(node, "arrival");
    const std::string kind = str(need(node, "kind", "arrival"), "arrival kind");
    if (kind == "poisson") {
      only_keys(node, {"kind", "rate"}, "poisson arrival");
      const double r = num(need(node, "rate", "poisson arrival"), "rate");
      return guarded(node, [&] { return ArrivalModel::poisson(r); });
    }
    if (kind == "nhpp") {
      only_keys(node, {"kind", "rate"}, "nhpp arrival");
      return ArrivalModel::nhpp(rate(need(node, "rate", "nhpp arrival")));
    }
    if (kind == "renewal") {
      only_keys(node, {"kind", "interarrival"}, "renewal arrival");
      ServiceModel g = service(need(node, "interarrival", "renewal arrival"));
      return guarded(node, [&] { return ArrivalModel::renewal(g); });
    }
    if (kind == "time_changed_renewal") {
      only_keys(node, {"kind", "interarrival", "rate"}, "time_changed_renewal arrival");
      ServiceModel g = service(need(node, "interarrival", kind));
      RateFunction r = rate(need(node, "rate", kind));
      return guarded(node, [&] { return ArrivalModel::time_changed_renewal(g, r); });
    }
    fail(node, "unknown arrival kind '" + kind + "' (expected poisson, nhpp, renewal, time_changed_renewal)");
  }

  std::vector<double> axis(const YAML::Node& node, const std::string& what) const {
    if (node.IsSequence()) return numbers(node, what);
    expect_map(node, what);
    only_keys(node, {"from", "to", "count"}, what);
    const double lo = num(need(node, "from", what), "from"), hi = num(need(node, "to", what), "to");
    const long count = integer(need(node, "count", what), "count", 1);
    if (count > 1 && !(hi > lo)) fail(node, what + ": 'to' must exceed 'from'");
    return Grid::linspace(lo, hi, static_cast<std::size_t>(count));
  }

  Grid grid(const YAML::Node& node) const {
    expect_map(node, "grid");
    only_keys(node, {"t", "y"}, "grid");
    auto t = axis(need(node, "t", "grid"), "grid.t");
    auto y = axis(need(node, "y", "grid"), "grid.y");
    return guarded(node, [&] { return Grid(t, y); });
  }

  Tolerances tolerances(const YAML::Node& node) const {
    expect_map(node, "tolerances");
    Tolerances tol;
    const std::pair<const char*, double*> fields[] = {
        {"fluid_abs", &tol.fluid_abs},         {"variance_rel", &tol.variance_rel},
        {"workload_abs", &tol.workload_abs},   {"dispersion_abs", &tol.dispersion_abs},
        {"thinning_rel", &tol.thinning_rel},   {"age_abs", &tol.age_abs},
        {"age_pass_fraction", &tol.age_pass_fraction}, {"component_rel", &tol.component_rel},
        {"correlation_abs", &tol.correlation_abs},     {"skew_abs", &tol.skew_abs},
        {"kurtosis_abs", &tol.kurtosis_abs},   {"markov_factor", &tol.markov_factor},
        {"steady_state", &tol.steady_state},   {"identity", &tol.identity}};
    std::set<std::string> allowed;
    for (const auto& [key, ptr] : fields) allowed.insert(key);
    only_keys(node, allowed, "tolerances");
    for (const auto& [key, ptr] : fields)
      if (node[key]) {
        *ptr = num(node[key], key);
        if (!(*ptr > 0.0)) fail(node[key], std::string("tolerance ") + key + " must be positive");
      }
    return tol;
  }

  InitSpec init(const YAML::Node& node) const {
    expect_map(node, "init");
    only_keys(node, {"density", "count", "residual"}, "init");
    InitSpec spec;
    spec.condition.density = num(need(node, "density", "init"), "density");
    if (!(spec.condition.density >= 0.0)) fail(node["density"], "initial density must be nonnegative");
    if (node["count"]) {
      const std::string law = str(node["count"], "count");
      if (law == "fixed")
        spec.condition.count_law = InitialCondition::CountLaw::fixed;
      else if (law == "poisson")
        spec.condition.count_law = InitialCondition::CountLaw::poisson;
      else
        fail(node["count"], "init.count must be 'fixed' or 'poisson'");
    }
    spec.condition.residual = service(need(node, "residual", "init"));
    return spec;
  }

  MarkovSpec markov(const YAML::Node& node) const {
    expect_map(node, "markov");
    only_keys(node, {"t1", "t2", "y", "residual_paths"}, "markov");
    MarkovSpec m;
    if (node["t1"]) m.t1 = num(node["t1"], "t1");
    if (node["t2"]) m.t2 = num(node["t2"], "t2");
    if (node["y"]) m.y = num(node["y"], "y");
    if (node["residual_paths"]) m.residual_paths = static_cast<std::size_t>(integer(node["residual_paths"], "residual_paths", 1));
    if (!(m.t1 < m.t2)) fail(node, "markov: need t1 < t2");
    return m;
  }

  ExperimentKind experiment(const YAML::Node& node) const {
    const std::string name = str(node, "experiment");
    for (auto k : {ExperimentKind::fwlln, ExperimentKind::fclt_variance, ExperimentKind::age_distribution,
                   ExperimentKind::poisson_property, ExperimentKind::limit_path_validation,
                   ExperimentKind::markov_check, ExperimentKind::workload})
      if (name == to_string(k)) return k;
    fail(node, "unknown experiment '" + name + "'");
  }
};

}  // namespace detail

/// Parse YAML text. `source` names the origin in error messages.
inline ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  detail::Reader r{source};
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    std::ostringstream os;
    os << source << ':' << e.mark.line + 1 << ':' << e.mark.column + 1 << ": malformed YAML: " << e.msg;
    throw ConfigError(os.str());
  }
  if (!root || !root.IsMap()) throw ConfigError(source + ": config must be a mapping");
  r.only_keys(root,
              {"experiment", "arrival", "service", "init", "n", "replications", "paths", "grid", "k", "seed",
               "threads", "tolerances", "markov"},
              "config");

  ExperimentConfig cfg;
  cfg.experiment = r.experiment(r.need(root, "experiment", "config"));
  cfg.arrival = r.arrival(r.need(root, "arrival", "config"));
  cfg.service = r.service(r.need(root, "service", "config"));
  cfg.grid = r.grid(r.need(root, "grid", "config"));
  if (root["init"]) cfg.init = r.init(root["init"]);
  if (root["n"]) {
    const YAML::Node n = root["n"];
    cfg.n_list.clear();
    if (n.IsScalar()) {
      cfg.n_list.push_back(r.integer(n, "n", 1));
    } else if (n.IsSequence()) {
      for (const auto& v : n) cfg.n_list.push_back(r.integer(v, "n", 1));
      if (cfg.n_list.empty()) r.fail(n, "n must be nonempty");
    } else {
      r.fail(n, "n must be an integer or a list of integers");
    }
  }
  if (root["replications"]) cfg.replications = static_cast<std::size_t>(r.integer(root["replications"], "replications", 1));
  if (root["paths"]) cfg.paths = static_cast<std::size_t>(r.integer(root["paths"], "paths", 0));
  if (root["k"]) cfg.k = static_cast<std::size_t>(r.integer(root["k"], "k", 1));
  if (root["seed"]) {
    const YAML::Node s = root["seed"];
    try {
      cfg.master_seed = s.as<std::uint64_t>();
    } catch (const YAML::Exception&) {
      r.fail(s, "seed must be a nonnegative integer");
    }
  }
  if (root["threads"]) cfg.threads = static_cast<unsigned>(r.integer(root["threads"], "threads", 1));
  if (root["tolerances"]) cfg.tol = r.tolerances(root["tolerances"]);
  if (root["markov"]) cfg.markov = r.markov(root["markov"]);

  YAML::Emitter out;
  out << root;
  cfg.echo = out.c_str();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace hqinf::harness
