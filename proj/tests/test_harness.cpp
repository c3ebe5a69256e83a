#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "hqinf/harness/acceptance.hpp"
#include "hqinf/harness/config.hpp"
#include "hqinf/harness/experiments.hpp"
#include "hqinf/harness/report.hpp"

using namespace hqinf;
using namespace hqinf::harness;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(experiment: fwlln
arrival: {kind: poisson, rate: 1}
service: {kind: exponential, rate: 1}
grid: {t: [1], y: [0]}
)";

std::string config_error(const std::string& text) {
  try {
    parse_config_text(text, "cfg.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hqinf_test_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig quick(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  c.grid = Grid({0.5, 1.0}, {0.0, 0.5});
  c.n_list = {50, 200};
  c.replications = 30;
  c.k = 30;
  c.master_seed = 5;
  return c;
}

}  // namespace

TEST(Config, MinimalUsesDefaults) {
  const auto c = parse_config_text(kMinimal);
  const ExperimentConfig d;
  EXPECT_EQ(c.experiment, ExperimentKind::fwlln);
  EXPECT_EQ(c.n_list, d.n_list);
  EXPECT_EQ(c.replications, 200u);
  EXPECT_EQ(c.k, 200u);
  EXPECT_EQ(c.master_seed, 1u);
  EXPECT_EQ(c.threads, 1u);
  EXPECT_EQ(c.tol.fluid_abs, 0.05);
  EXPECT_EQ(c.tol.variance_rel, 0.10);
  EXPECT_FALSE(c.init.has_value());
  EXPECT_FALSE(c.echo.empty());
}

TEST(Config, FullDocument) {
  const auto c = parse_config_text(R"(experiment: limit_path_validation
arrival:
  kind: time_changed_renewal
  interarrival: {kind: uniform, a: 0, b: 2}
  rate: {kind: sinusoidal, a: 1, b: 0.5}
service:
  kind: mixture
  weight: 0.25
  continuous: {kind: lognormal, logmean: 0, logsd: 0.5}
  atomic: {kind: finite_atoms, atoms: [{point: 1, mass: 0.5}, {point: 2, mass: 0.5}]}
init: {density: 2, count: poisson, residual: {kind: pareto, shape: 3, scale: 1}}
n: [100, 400]
replications: 17
paths: 3
k: 64
seed: 99
threads: 3
grid: {t: {from: 0.5, to: 2, count: 4}, y: [0, 1]}
tolerances: {variance_rel: 0.2, markov_factor: 3}
markov: {t1: 0.5, t2: 1.5, y: 1, residual_paths: 7}
)");
  EXPECT_EQ(c.experiment, ExperimentKind::limit_path_validation);
  EXPECT_EQ(c.arrival.kind(), ArrivalModel::Kind::time_changed_renewal);
  EXPECT_NEAR(c.arrival.ca2(), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(c.service.kind(), ServiceModel::Kind::mixture);
  ASSERT_TRUE(c.init.has_value());
  EXPECT_EQ(c.init->condition.count_law, InitialCondition::CountLaw::poisson);
  EXPECT_EQ(c.init->limits().variance, 2.0);
  EXPECT_EQ(c.n_list, (std::vector<long>{100, 400}));
  EXPECT_EQ(c.replications, 17u);
  EXPECT_EQ(c.paths, 3u);
  EXPECT_EQ(c.k, 64u);
  EXPECT_EQ(c.master_seed, 99u);
  EXPECT_EQ(c.threads, 3u);
  EXPECT_EQ(c.grid.t, (std::vector<double>{0.5, 1.0, 1.5, 2.0}));
  EXPECT_EQ(c.tol.variance_rel, 0.2);
  EXPECT_EQ(c.tol.markov_factor, 3.0);
  EXPECT_EQ(c.tol.fluid_abs, 0.05);
  EXPECT_EQ(c.markov.residual_paths, 7u);
  EXPECT_EQ(c.markov.t2, 1.5);
}

TEST(Config, NonpositiveRateIsRejectedWithLocation) {
  const std::string e = config_error("experiment: fwlln\narrival: {kind: poisson, rate: 0}\n"
                                     "service: {kind: exponential, rate: 1}\ngrid: {t: [1], y: [0]}\n");
  EXPECT_NE(e.find("rate must be positive"), std::string::npos) << e;
  EXPECT_EQ(e.rfind("cfg.yaml:2:", 0), 0u) << e;
}

TEST(Config, DuplicateGridPointIsRejected) {
  const std::string e = config_error("experiment: fwlln\narrival: {kind: poisson, rate: 1}\n"
                                     "service: {kind: exponential, rate: 1}\ngrid: {t: [1, 1], y: [0]}\n");
  EXPECT_NE(e.find("duplicate"), std::string::npos) << e;
}

TEST(Config, Errors) {
  EXPECT_NE(config_error(std::string(kMinimal) + "colour: red\n").find("unknown key 'colour'"), std::string::npos);
  EXPECT_NE(config_error("experiment: fwlln\narrival: {kind: poisson, rate: 1}\n"
                         "service: {kind: gamma, shape: 2}\ngrid: {t: [1], y: [0]}\n")
                .find("unknown distribution kind 'gamma'"),
            std::string::npos);
  EXPECT_NE(config_error("experiment: fwlln\narrival: {kind: poisson}\n"
                         "service: {kind: exponential, rate: 1}\ngrid: {t: [1], y: [0]}\n")
                .find("missing key 'rate'"),
            std::string::npos);
  EXPECT_NE(config_error("experiment: nope\n").find("unknown experiment"), std::string::npos);
  EXPECT_NE(config_error("experiment: [fwlln\n").find("malformed YAML"), std::string::npos);
  EXPECT_NE(config_error(std::string(kMinimal) + "replications: 0\n").find("replications must be >= 1"),
            std::string::npos);
  EXPECT_NE(config_error(std::string(kMinimal) + "seed: -3\n").find("seed"), std::string::npos);
  EXPECT_NE(config_error(std::string(kMinimal) + "tolerances: {fluid_abs: -1}\n").find("must be positive"),
            std::string::npos);
  EXPECT_NE(config_error("- 1\n- 2\n").find("mapping"), std::string::npos);
  EXPECT_THROW(parse_config("/nonexistent/x.yaml"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(HQINF_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".yaml") continue;
    SCOPED_TRACE(entry.path().string());
    EXPECT_NO_THROW(parse_config(entry.path().string()));
    ++count;
  }
  EXPECT_GE(count, 7u);
}

TEST(Report, JudgeKinds) {
  EXPECT_TRUE(judge("a", 1, 0, 0, 1.04, 1.0, 0.05, CheckKind::abs).pass);
  EXPECT_FALSE(judge("a", 1, 0, 0, 1.06, 1.0, 0.05, CheckKind::abs).pass);
  EXPECT_TRUE(judge("r", 1, 0, 0, 2.1, 2.0, 0.1, CheckKind::rel).pass);
  EXPECT_FALSE(judge("r", 1, 0, 0, 2.3, 2.0, 0.1, CheckKind::rel).pass);
  EXPECT_TRUE(judge("b", 1, 0, 0, 0.01, kNaN, 0.02, CheckKind::below).pass);
  EXPECT_FALSE(judge("f", 1, 0, 0, 0.89, kNaN, 0.9, CheckKind::at_least).pass);
  EXPECT_TRUE(judge("f", 1, 0, 0, 0.9, kNaN, 0.9, CheckKind::at_least).pass);
  EXPECT_FALSE(judge("l", 1, 0, 0, 0.5, 0.5, kNaN, CheckKind::less).pass);
  EXPECT_TRUE(judge("i", 1, 0, 0, 1e9, 0.0, 0.0, CheckKind::info).pass);
  const auto p = judge("x", 1, 0, 0, 3.0, 2.0, 1.0, CheckKind::rel);
  EXPECT_DOUBLE_EQ(p.abs_err, 1.0);
  EXPECT_DOUBLE_EQ(p.rel_err, 0.5);
}

TEST(Report, EmptyReportPassesAndEmits) {
  ExperimentReport r;
  r.experiment = "fwlln";
  EXPECT_TRUE(r.verdict());
  EXPECT_EQ(r.failures(), 0u);
  const fs::path out = scratch("empty");
  emit(r, out);
  EXPECT_EQ(slurp(out / "summary.csv"), "label,kind,n,t,y,estimate,target,abs_err,rel_err,tolerance,pass\n");
  const auto j = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(j["experiment"], "fwlln");
  EXPECT_TRUE(fs::is_directory(out / "plotdata"));
}

TEST(Report, FailureIsCounted) {
  ExperimentReport r;
  r.add(judge("ok", 1, 0, 0, 0.0, 0.0, 1.0, CheckKind::abs));
  r.add(judge("bad", 1, 0, 0, 5.0, 0.0, 1.0, CheckKind::abs));
  EXPECT_FALSE(r.verdict());
  EXPECT_EQ(r.failures(), 1u);
  std::ostringstream os;
  write_summary_csv(os, r);
  EXPECT_NE(os.str().find("bad,abs,1,0,0,5,0,5,nan,1,0\n"), std::string::npos) << os.str();
}

TEST(Replications, ResultsIndexedAndExceptionsPropagate) {
  auto v = run_replications<std::size_t>(50, 4, [](std::size_t i) { return i * i; });
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(v[i], i * i);
  EXPECT_THROW(run_replications<int>(10, 3, [](std::size_t i) -> int {
                 if (i == 7) throw std::runtime_error("boom");
                 return 0;
               }),
               std::runtime_error);
}

// Same seed gives byte-identical summaries; so does a different thread count.
TEST(Experiments, DeterministicAcrossRunsAndThreads) {
  for (auto kind : {ExperimentKind::fwlln, ExperimentKind::fclt_variance, ExperimentKind::limit_path_validation}) {
    ExperimentConfig c = quick(kind);
    std::ostringstream a, b, d;
    write_summary_csv(a, run_experiment(c));
    write_summary_csv(b, run_experiment(c));
    c.threads = 3;
    write_summary_csv(d, run_experiment(c));
    EXPECT_EQ(a.str(), b.str()) << to_string(kind);
    EXPECT_EQ(a.str(), d.str()) << to_string(kind);
    c.master_seed = 6;
    std::ostringstream e;
    write_summary_csv(e, run_experiment(c));
    EXPECT_NE(a.str(), e.str()) << to_string(kind);
  }
}

TEST(Experiments, EmitIsReproducible) {
  ExperimentConfig c = parse_config((fs::path(HQINF_SOURCE_DIR) / "configs" / "quick_fwlln.yaml").string());
  const fs::path o1 = scratch("emit1"), o2 = scratch("emit2");
  emit(run_experiment(c), o1);
  c.threads = 2;
  emit(run_experiment(c), o2);
  EXPECT_EQ(slurp(o1 / "summary.csv"), slurp(o2 / "summary.csv"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(o1 / "plotdata")) {
    EXPECT_EQ(slurp(e.path()), slurp(o2 / "plotdata" / e.path().filename()));
    ++files;
  }
  EXPECT_GT(files, 0u);
}

// With the noise switched off every limit-path statistic collapses to 0.
TEST(Experiments, ZeroNoiseHook) {
  ExperimentConfig c = quick(ExperimentKind::limit_path_validation);
  c.service = acceptance::mixture_exp_atoms();
  const auto r = run_limit_path_validation(c, true);
  EXPECT_TRUE(r.verdict()) << acceptance::describe(r);
  std::size_t below = 0;
  for (const auto& p : r.points)
    if (p.kind == CheckKind::below && p.label.rfind("var_", 0) == 0) {
      EXPECT_EQ(p.estimate, 0.0) << p.label;
      ++below;
    }
  EXPECT_GT(below, 0u);
  const auto m = run_markov_check(quick(ExperimentKind::markov_check), true);
  EXPECT_EQ(acceptance::find(m, "markov_residual")->estimate, 0.0);
}

TEST(Experiments, PoissonPropertyNeedsPoissonArrivals) {
  ExperimentConfig c = quick(ExperimentKind::poisson_property);
  c.arrival = ArrivalModel::renewal(ServiceModel::deterministic(1.0));
  EXPECT_THROW(run_experiment(c), std::exception);
}

TEST(Experiments, IdentityErrorsAreTiny) {
  ExperimentConfig c = quick(ExperimentKind::fwlln);
  c.service = acceptance::mixture_exp_atoms();
  c.init = InitSpec{{InitialCondition::CountLaw::poisson, 1.0, ServiceModel::exponential(1.0)}};
  const auto tr = harness::detail::simulate_rep(c, 100, 0);
  const auto e = identity_errors(tr, c.grid, c.arrival, c.service);
  for (double v : {e.arrivals, e.workload, e.qt_consistency, e.qe_shift, e.total}) EXPECT_LT(v, 1e-9);
  EXPECT_TRUE(std::isnan(e.hat_split));  // atoms: only the sum is formed
  EXPECT_LT(mixture_reconstruction_error(c.service, {0.0, 0.5, 1.0, 2.0, 3.0}), 1e-10);
}

TEST(Experiments, AnalyticSurfacesCoverGrid) {
  ExperimentConfig c = quick(ExperimentKind::fwlln);
  c.init = InitSpec{{InitialCondition::CountLaw::fixed, 1.0, ServiceModel::exponential(1.0)}};
  const auto s = analytic_surfaces(c);
  std::set<std::string> labels;
  for (const auto& f : s) {
    labels.insert(f.label);
    EXPECT_EQ(f.values.size(), c.grid.size());
  }
  for (const char* l : {"fluid_qr", "fluid_qe", "fluid_wr", "var_qr", "var_qe", "var_w", "var_total"})
    EXPECT_TRUE(labels.count(l)) << l;
}

TEST(Acceptance, CriteriaAreNumberedOneToTen) {
  const auto list = acceptance_criteria();
  ASSERT_EQ(list.size(), 10u);
}
