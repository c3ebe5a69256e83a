#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hqinf/harness/experiments.hpp"

namespace hqinf::harness {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace acceptance {

// Pinned tolerances.
inline constexpr double kIdentity = 1e-9;
inline constexpr double kFluidAbs = 0.05;
inline constexpr double kPoissonAnalytic = 1e-8;
inline constexpr double kDispersionAbs = 0.1;
inline constexpr double kThinningRel = 0.15;
inline constexpr double kVarianceRel = 0.10;
inline constexpr double kVarianceRelLoose = 0.15;
inline constexpr double kAdditivity = 1e-6;
inline constexpr double kAgeAbs = 0.05;
inline constexpr double kAgePassFraction = 0.9;
inline constexpr double kWorkloadAbs = 0.07;
inline constexpr double kSteadyState = 1e-6;
inline constexpr double kComponentRel = 0.15;
inline constexpr double kCorrelationAbs = 0.06;
inline constexpr double kSkewAbs = 0.1;
inline constexpr double kKurtosisAbs = 0.2;
inline constexpr double kMarkovFactor = 5.0;
inline constexpr std::uint64_t kSeed = 20240601;

inline Tolerances pinned() {
  Tolerances t;
  t.fluid_abs = kFluidAbs;
  t.variance_rel = kVarianceRel;
  t.workload_abs = kWorkloadAbs;
  t.dispersion_abs = kDispersionAbs;
  t.thinning_rel = kThinningRel;
  t.age_abs = kAgeAbs;
  t.age_pass_fraction = kAgePassFraction;
  t.component_rel = kComponentRel;
  t.correlation_abs = kCorrelationAbs;
  t.skew_abs = kSkewAbs;
  t.kurtosis_abs = kKurtosisAbs;
  t.markov_factor = kMarkovFactor;
  t.steady_state = kSteadyState;
  t.identity = kIdentity;
  return t;
}

inline ExperimentConfig base(ExperimentKind kind, ArrivalModel arrival, ServiceModel service, Grid grid,
                             std::vector<long> n, std::size_t reps, unsigned threads) {
  ExperimentConfig c;
  c.experiment = kind;
  c.arrival = std::move(arrival);
  c.service = std::move(service);
  c.grid = std::move(grid);
  c.n_list = std::move(n);
  c.replications = reps;
  c.master_seed = kSeed;
  c.threads = threads;
  c.tol = pinned();
  c.echo = "acceptance";
  return c;
}

/// First failing rows of a report, or its row count.
inline std::string describe(const ExperimentReport& r, std::size_t max_rows = 3) {
  std::ostringstream os;
  std::size_t shown = 0;
  for (const auto& p : r.points)
    if (!p.pass && shown++ < max_rows)
      os << " [" << p.label << " n=" << p.n << " t=" << p.t << " y=" << p.y << " est=" << p.estimate
         << " target=" << p.target << " tol=" << p.tolerance << "]";
  if (shown == 0) os << ' ' << r.points.size() << " checks";
  else if (shown > max_rows) os << " (+" << shown - max_rows << " more)";
  return os.str();
}

inline const PointStat* find(const ExperimentReport& r, const std::string& label, double t = kNaN, double y = kNaN) {
  for (const auto& p : r.points)
    if (p.label == label && (std::isnan(t) || p.t == t) && (std::isnan(y) || p.y == y)) return &p;
  return nullptr;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline ServiceModel mixture_exp_atoms() {
  return ServiceModel::mixture(0.5, ServiceModel::exponential(1.0),
                               ServiceModel::finite_atoms({{1.0, 0.6}, {2.0, 0.4}}));
}

inline ServiceModel mixture_exp_unit_atom() {
  return ServiceModel::mixture(0.5, ServiceModel::exponential(1.0), ServiceModel::deterministic(1.0));
}

// --- criteria --------------------------------------------------------------

inline CriterionResult exact_identities(unsigned threads) {
  CriterionResult c{1, "exact identities", true, ""};
  const Grid g({0.5, 1.0, 2.0, 3.0}, {0.0, 0.5, 1.0, 2.0, 3.0});
  struct Case {
    const char* name;
    ArrivalModel arrival;
    ServiceModel service;
    bool init;
  };
  const Case cases[] = {
      {"M/exp", ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), false},
      {"M/det", ArrivalModel::poisson(1.0), ServiceModel::deterministic(1.0), false},
      {"M/mixture", ArrivalModel::poisson(1.0), mixture_exp_atoms(), false},
      {"nhpp/lognormal", ArrivalModel::nhpp(RateFunction::sinusoidal(1.0, 0.5, 1.0, 0.0)),
       ServiceModel::lognormal(-0.2, 0.6), false},
      {"renewal/uniform+init", ArrivalModel::renewal(ServiceModel::uniform(0.0, 2.0)), ServiceModel::uniform(0.5, 1.5),
       true},
  };
  double worst = 0.0;
  std::ostringstream os;
  for (const Case& k : cases) {
    ExperimentConfig cfg = base(ExperimentKind::fwlln, k.arrival, k.service, g, {200}, 20, threads);
    if (k.init) cfg.init = InitSpec{{InitialCondition::CountLaw::poisson, 1.0, ServiceModel::exponential(1.0)}};
    auto errs = run_replications<IdentityErrors>(cfg.replications, threads, [&](std::size_t rep) {
      return identity_errors(detail::simulate_rep(cfg, 200, rep), g, cfg.arrival, cfg.service);
    });
    IdentityErrors e;
    for (const auto& x : errs) e.merge(x);
    for (double v : {e.arrivals, e.workload, e.qt_consistency, e.qe_shift, e.hat_split, e.total})
      if (!std::isnan(v)) worst = std::max(worst, v);
    const double mix = mixture_reconstruction_error(k.service, Grid::linspace(0.0, 4.0, 401));
    worst = std::max(worst, mix);
  }
  for (const ServiceModel& s : {ServiceModel::hyperexponential({0.3, 0.7}, {0.5, 2.0}), mixture_exp_unit_atom()})
    worst = std::max(worst, mixture_reconstruction_error(s, Grid::linspace(0.0, 4.0, 401)));
  c.pass = worst < kIdentity;
  os << "max violation " << fmt(worst) << " < " << kIdentity << " over 5 models x 20 replications";
  c.detail = os.str();
  return c;
}

inline CriterionResult fwlln(unsigned threads) {
  CriterionResult c{2, "FWLLN", true, ""};
  const Grid g({0.5, 1.0, 2.0, 3.0, 4.0}, {0.0, 0.25, 0.5, 1.0, 2.0});
  std::ostringstream os;
  auto sup_at = [](const ExperimentReport& r, long n) {
    for (const auto& p : r.points)
      if (p.label == "sup_err_Qr_bar" && p.n == n) return p.estimate;
    return kNaN;
  };
  ExperimentConfig exp = base(ExperimentKind::fwlln, ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), g,
                              {100, 400, 1600}, 200, threads);
  const ExperimentReport r1 = run_fwlln(exp);
  const double e100 = sup_at(r1, 100), e400 = sup_at(r1, 400), e1600 = sup_at(r1, 1600);
  const bool ok1 = e400 < kFluidAbs && e1600 < e100;
  os << "M/exp sup err n=100/400/1600: " << fmt(e100) << "/" << fmt(e400) << "/" << fmt(e1600);

  ExperimentConfig det = base(ExperimentKind::fwlln, ArrivalModel::poisson(1.0), ServiceModel::deterministic(1.0), g,
                              {400}, 200, threads);
  const ExperimentReport r2 = run_fwlln(det);
  const double e2 = sup_at(r2, 400);
  os << "; M/D(1) " << fmt(e2);

  ExperimentConfig nh = base(ExperimentKind::fwlln, ArrivalModel::nhpp(RateFunction::sinusoidal(1.0, 0.5, 1.0, 0.0)),
                             ServiceModel::exponential(1.0), g, {400}, 200, threads);
  const ExperimentReport r3 = run_fwlln(nh);
  const double e3 = sup_at(r3, 400);
  os << "; nhpp 1+0.5sin(t) " << fmt(e3);
  c.pass = ok1 && e2 < kFluidAbs && e3 < kFluidAbs;
  if (!r1.verdict()) os << ";" << describe(r1);
  c.detail = os.str();
  return c;
}

inline CriterionResult poisson_collapse(unsigned threads) {
  CriterionResult c{3, "Poisson collapse", true, ""};
  const Grid g({0.5, 1.0, 2.0, 4.0, 8.0}, {0.0, 0.25, 0.5, 1.0, 2.0});
  double worst = 0.0;
  for (const ServiceModel& s : {ServiceModel::exponential(1.0), ServiceModel::lognormal(0.0, 0.8),
                                ServiceModel::hyperexponential({0.3, 0.7}, {0.5, 2.0}), mixture_exp_atoms()}) {
    for (const RateFunction& rate : {RateFunction::constant(1.3), RateFunction::sinusoidal(1.0, 0.5, 1.0, 0.0)}) {
      const LimitInputs in(rate, 1.0, s);
      for (double t : g.t)
        for (double y : g.y) {
          worst = std::max(worst, std::abs(var_qr(in, t, y) - fluid_qr(in, t, y)));
          worst = std::max(worst, std::abs(var_components(in, t, y).total() - fluid_qr(in, t, y)));
          if (y <= t) worst = std::max(worst, std::abs(var_qe(in, t, y) - fluid_qe(in, t, y)));
        }
    }
  }
  ExperimentConfig cfg = base(ExperimentKind::poisson_property, ArrivalModel::poisson(1.0),
                              ServiceModel::exponential(1.0), Grid({1.0}, {0.0, 0.5}), {100}, 2000, threads);
  const ExperimentReport r = run_poisson_property(cfg);
  const PointStat* d = find(r, "dispersion", 1.0, 0.0);
  std::ostringstream os;
  os << "analytic |var-mean| max (direct and component routes) " << fmt(worst) << " (< " << kPoissonAnalytic << "); var/mean at (1,0) "
     << (d ? fmt(d->estimate) : "?") << ";" << describe(r);
  c.pass = worst < kPoissonAnalytic && r.verdict();
  c.detail = os.str();
  return c;
}

inline CriterionResult fclt_variance(unsigned threads) {
  CriterionResult c{4, "FCLT variance", true, ""};
  std::ostringstream os;
  ExperimentConfig m = base(ExperimentKind::fclt_variance, ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0),
                            Grid({2.0}, {0.0}), {100}, 2000, threads);
  const ExperimentReport r1 = run_fclt_variance(m);
  const PointStat* p1 = find(r1, "var_Qt_hat", 2.0, 0.0);
  const bool target_ok = std::abs(var_qr(m.limit_inputs(), 2.0, 0.0) - (1.0 - std::exp(-2.0))) < 1e-8;
  os << "M/exp Var Qt(2) " << (p1 ? fmt(p1->estimate) : "?") << " vs 0.864665";

  ExperimentConfig d = base(ExperimentKind::fclt_variance, ArrivalModel::renewal(ServiceModel::deterministic(1.0)),
                            ServiceModel::exponential(1.0), Grid({8.0}, {0.0}), {400}, 2000, threads);
  d.tol.variance_rel = kVarianceRelLoose;
  const ExperimentReport r2 = run_fclt_variance(d);
  const PointStat* p2 = find(r2, "var_Qt_hat", 8.0, 0.0);
  const bool d_ok = p2 && std::abs(p2->estimate - 0.5) / 0.5 < kVarianceRelLoose;
  os << "; D/exp Var Q(8,0) " << (p2 ? fmt(p2->estimate) : "?") << " vs 0.5";

  ExperimentConfig x = base(ExperimentKind::fclt_variance, ArrivalModel::poisson(1.0), mixture_exp_unit_atom(),
                            Grid({2.0}, {0.0, 0.5}), {100}, 2000, threads);
  x.tol.variance_rel = kVarianceRelLoose;
  const ExperimentReport r3 = run_fclt_variance(x);
  const PointStat* p3 = find(r3, "var_Qr_hat", 2.0, 0.5);
  os << "; mixture Var Q(2,0.5) " << (p3 ? fmt(p3->estimate) : "?") << " vs " << (p3 ? fmt(p3->target) : "?");
  c.pass = target_ok && r1.verdict() && d_ok && r2.verdict() && r3.verdict();
  for (const auto* r : {&r1, &r2, &r3})
    if (!r->verdict()) os << ";" << describe(*r);
  c.detail = os.str();
  return c;
}

inline CriterionResult variance_additivity(unsigned) {
  CriterionResult c{5, "variance additivity", true, ""};
  const std::vector<double> ts{0.5, 1.0, 2.0, 4.0, 8.0}, ys{0.0, 0.25, 0.5, 1.0, 2.5};
  double worst = 0.0;
  for (const ServiceModel& s : {ServiceModel::exponential(1.0), mixture_exp_atoms(),
                                ServiceModel::hyperexponential({0.3, 0.7}, {0.5, 2.0})})
    for (double ca2 : {0.0, 1.0, 1.7}) {
      const LimitInputs in(RateFunction::constant(1.0), ca2, s);
      for (double t : ts)
        for (double y : ys) worst = std::max(worst, std::abs(var_components(in, t, y).total() - var_qr(in, t, y)));
    }
  c.pass = worst < kAdditivity;
  c.detail = "max |sum of components - var_qr| " + fmt(worst) + " over 3 models x 3 c_a^2 x 5x5 grid";
  return c;
}

inline CriterionResult age_distribution(unsigned threads) {
  CriterionResult c{6, "age distribution", true, ""};
  ExperimentConfig e = base(ExperimentKind::age_distribution, ArrivalModel::poisson(1.0),
                            ServiceModel::exponential(1.0), Grid({8.0}, Grid::linspace(0.0, 5.0, 51)), {400}, 20,
                            threads);
  const ExperimentReport r1 = run_age_distribution(e);
  ExperimentConfig d = base(ExperimentKind::age_distribution, ArrivalModel::poisson(1.0),
                            ServiceModel::deterministic(1.0), Grid({8.0}, Grid::linspace(0.0, 1.0, 51)), {400}, 20,
                            threads);
  const ExperimentReport r2 = run_age_distribution(d);
  const PointStat* f1 = find(r1, "age_pass_fraction");
  const PointStat* f2 = find(r2, "age_pass_fraction");
  c.pass = r1.verdict() && r2.verdict();
  c.detail = "pass fraction over 20 seeds: M/exp " + (f1 ? fmt(f1->estimate) : "?") + ", M/D(1) " +
             (f2 ? fmt(f2->estimate) : "?") + " (need >= " + fmt(kAgePassFraction) + ")";
  return c;
}

inline CriterionResult workload(unsigned threads) {
  CriterionResult c{7, "workload", true, ""};
  ExperimentConfig w = base(ExperimentKind::workload, ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0),
                            Grid({8.0}, {0.0}), {100}, 200, threads);
  const ExperimentReport r = run_workload(w);
  const PointStat* wt = find(r, "Wt_bar", 8.0, 0.0);
  const SteadyStateWorkload se = steady_state_workload(LimitInputs(RateFunction::constant(1.0), 1.0,
                                                                   ServiceModel::exponential(1.0)));
  const SteadyStateWorkload sd = steady_state_workload(LimitInputs(RateFunction::constant(1.0), 1.0,
                                                                   ServiceModel::deterministic(1.0)));
  const bool ss_ok = std::abs(se.quadrature - 1.0) < kSteadyState && std::abs(sd.quadrature - 0.5) < kSteadyState;
  c.pass = r.verdict() && ss_ok;
  c.detail = "mean Wt_n(8) " + (wt ? fmt(wt->estimate) + " vs " + fmt(wt->target) : std::string("?")) +
             "; steady state exp " + fmt(se.quadrature) + ", det " + fmt(sd.quadrature) + ";" + describe(r);
  return c;
}

inline CriterionResult limit_paths(unsigned threads) {
  CriterionResult c{8, "limit-path validation", true, ""};
  ExperimentConfig cfg = base(ExperimentKind::limit_path_validation, ArrivalModel::poisson(1.0),
                              ServiceModel::exponential(1.0), Grid({0.5, 1.0, 2.0}, {0.0, 0.5, 1.0}), {1}, 4000,
                              threads);
  cfg.k = 200;
  const auto start = std::chrono::steady_clock::now();
  const ExperimentReport r = run_limit_path_validation(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const PointStat* v = find(r, "var_Qr_hat", 1.0, 0.0);
  const PointStat* kc = find(r, "kiefer_cov_U_1_0.3_0.6");
  const PointStat* inc = find(r, "ms_increment_X2_hat", 1.0, 0.0);
  c.pass = r.verdict() && secs <= 300.0;
  c.detail = "Var Qr(1,0) " + (v ? fmt(v->estimate) : "?") + " vs 0.632121; Kiefer cov " +
             (kc ? fmt(kc->estimate) : "?") + " vs 0.12; X2 increment " + (inc ? fmt(inc->estimate) : "?") + " vs " +
             (inc ? fmt(inc->target) : "?") + "; " + fmt(secs) + " s;" + describe(r);
  return c;
}

inline CriterionResult markov(unsigned threads) {
  CriterionResult c{9, "Markov decomposition", true, ""};
  ExperimentConfig cfg = base(ExperimentKind::markov_check, ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0),
                              Grid({0.5, 1.0}, {0.0, 0.5}), {1}, 4000, threads);
  cfg.k = 200;
  cfg.markov = {0.5, 1.0, 0.0, 100};
  const ExperimentReport r = run_markov_check(cfg);
  const PointStat* res = find(r, "markov_residual");
  const PointStat* cor = find(r, "markov_corr_earlier_Z");
  c.pass = r.verdict();
  c.detail = "residual " + (res ? fmt(res->estimate) + " < " + fmt(res->tolerance) : std::string("?")) + "; |corr| " +
             (cor ? fmt(cor->estimate) : "?");
  return c;
}

inline CriterionResult initial_conditions(unsigned threads) {
  CriterionResult c{10, "initial conditions", true, ""};
  const double ln2 = std::log(2.0);
  ExperimentConfig cfg = base(ExperimentKind::fclt_variance, ArrivalModel::poisson(1.0),
                              ServiceModel::exponential(1.0), Grid({0.5}, {0.0, ln2}), {10000}, 2000, threads);
  cfg.init = InitSpec{{InitialCondition::CountLaw::fixed, 1.0, ServiceModel::exponential(1.0)}};
  const ExperimentReport r = run_fclt_variance(cfg);
  const PointStat* v = find(r, "var_Qir_hat", kNaN, ln2);
  const PointStat* id = find(r, "identity_total_field");
  c.pass = r.verdict() && v && id;
  c.detail = "Var Qir(ln 2) " + (v ? fmt(v->estimate) + " vs " + fmt(v->target) : std::string("?")) +
             "; total-field identity max " + (id ? fmt(id->estimate) : "?") + ";" + describe(r);
  return c;
}

}  // namespace acceptance

using CriterionFn = std::function<CriterionResult(unsigned)>;

inline std::vector<CriterionFn> acceptance_criteria() {
  using namespace acceptance;
  return {exact_identities, fwlln,    poisson_collapse, fclt_variance, variance_additivity,
          age_distribution, workload, limit_paths,      markov,        initial_conditions};
}

/// Runs every criterion and prints one line each; returns true iff all pass.
inline bool run_acceptance(std::ostream& os, unsigned threads = 1, std::vector<CriterionResult>* results = nullptr) {
  bool all = true;
  const char* names[] = {"exact identities", "FWLLN", "Poisson collapse", "FCLT variance", "variance additivity",
                         "age distribution", "workload", "limit-path validation", "Markov decomposition",
                         "initial conditions"};
  int index = 0;
  for (const auto& fn : acceptance_criteria()) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    CriterionResult res;
    try {
      res = fn(threads);
    } catch (const std::exception& e) {
      res.id = index;
      res.name = names[index - 1];
      res.pass = false;
      res.detail = std::string("error: ") + e.what();
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && res.pass;
    if (results) results->push_back(res);
    os << "criterion " << std::setw(2) << res.id << " " << (res.pass ? "PASS" : "FAIL") << "  " << res.name << ": "
       << res.detail << " (" << std::fixed << std::setprecision(1) << res.seconds << " s)" << std::defaultfloat
       << std::endl;
  }
  return all;
}

}  // namespace hqinf::harness
