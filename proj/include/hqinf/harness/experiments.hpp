#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hqinf/analytic_limits.hpp"
#include "hqinf/harness/config.hpp"
#include "hqinf/harness/report.hpp"
#include "hqinf/limit_paths.hpp"
#include "hqinf/queue_sim.hpp"
#include "hqinf/random.hpp"
#include "hqinf/scaling_empirics.hpp"
#include "hqinf/statistics.hpp"

namespace hqinf::harness {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// f(rep) for rep in [0, reps) over a worker pool; results are indexed by
/// replication, so aggregation order never depends on scheduling.
template <class R, class F>
std::vector<R> run_replications(std::size_t reps, unsigned threads, F&& f) {
  std::vector<R> out(reps);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(reps, 1))));
  if (threads == 1) {
    for (std::size_t r = 0; r < reps; ++r) out[r] = f(r);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t r; (r = next.fetch_add(1)) < reps;) {
        try {
          out[r] = f(r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = reps;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

/// One accumulator per grid point.
struct FieldMoments {
  Grid grid;
  std::vector<MomentAccumulator> acc;

  explicit FieldMoments(Grid g) : grid(std::move(g)), acc(grid.size()) {}
  void add(const TwoParamField& f) {
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k].add(f.values[k]);
  }
  const MomentAccumulator& at(std::size_t i, std::size_t j) const { return acc[i * grid.y.size() + j]; }
  TwoParamField mean(std::string label) const {
    TwoParamField out(std::move(label), grid);
    for (std::size_t k = 0; k < acc.size(); ++k) out.values[k] = acc[k].mean();
    return out;
  }
  TwoParamField variance(std::string label) const {
    TwoParamField out(std::move(label), grid);
    for (std::size_t k = 0; k < acc.size(); ++k) out.values[k] = acc[k].variance();
    return out;
  }
};

// ---------------------------------------------------------------------------
// Exact prelimit identities

struct IdentityErrors {
  double arrivals = 0.0;     // A_n(t) - Q^t(t) - D(t)
  double workload = 0.0;     // I(t) - W^t(t) - C(t)
  double qt_consistency = 0.0;  // Q^t(t) vs Q^r(t,0) and Q^e(t,t)
  double qe_shift = 0.0;     // Q^e(t,y) - Q^t(t) + Q^r(t-y,y)
  double hat_split = kNaN;   // Xhat_{n,1} (by parts) + Xhat_{n,2} - Qhat^r_n, continuous F only
  double total = kNaN;       // Q^{T,r} - Q^r - Q^{i,r}(t+.)

  void merge(const IdentityErrors& o) {
    auto mx = [](double a, double b) { return std::isnan(a) ? b : std::isnan(b) ? a : std::max(a, b); };
    arrivals = mx(arrivals, o.arrivals);
    workload = mx(workload, o.workload);
    qt_consistency = mx(qt_consistency, o.qt_consistency);
    qe_shift = mx(qe_shift, o.qe_shift);
    hat_split = mx(hat_split, o.hat_split);
    total = mx(total, o.total);
  }
};

/// Largest violation of each identity on one trace. Q^t(t) and Q^e(t,t) are
/// evaluated on their own grids; Q^r(t-y,y) is counted directly.
inline IdentityErrors identity_errors(const SimulationTrace& trace, const Grid& grid, const ArrivalModel& arrival,
                                      const ServiceModel& service) {
  IdentityErrors e;
  const QueueFields q = eval_queue_fields(trace, grid);
  const WorkloadFields w = eval_workload_fields(trace, grid);
  for (std::size_t i = 0; i < grid.t.size(); ++i) {
    const double t = grid.t[i];
    const double a = static_cast<double>(trace.arrived_by(t));
    e.arrivals = std::max(e.arrivals, std::abs(a - q.qt.at(i, 0) - q.d.at(i, 0)));
    e.workload = std::max(e.workload, std::abs(w.input.at(i, 0) - w.wt.at(i, 0) - w.completed.at(i, 0)));
    const QueueFields at_zero = eval_queue_fields(trace, Grid({t}, {0.0, t}));
    e.qt_consistency = std::max({e.qt_consistency, std::abs(q.qt.at(i, 0) - at_zero.qr.at(0, 0)),
                                 std::abs(q.qt.at(i, 0) - at_zero.qe.at(0, 1))});
    for (std::size_t j = 0; j < grid.y.size(); ++j) {
      const double y = grid.y[j];
      if (!(y < t)) continue;
      double earlier = 0.0;  // Q^r(t-y, y): arrivals by t-y present at t
      for (std::size_t k = 0, m = trace.arrived_by(t - y); k < m; ++k)
        if (trace.arrivals[k] + trace.services[k] > t) earlier += 1.0;
      e.qe_shift = std::max(e.qe_shift, std::abs(q.qe.at(i, j) - (q.qt.at(i, j) - earlier)));
    }
  }
  if (!service.has_atoms()) {
    // the identity is exact only if both sides see the same fluid centering,
    // so integrate it well below the identity tolerance
    const TwoParamField centering = surface("qbar_r", grid, [&](double t, double y) {
      if (!std::isfinite(y)) return 0.0;
      std::vector<double> breaks;
      for (double k : service.kinks()) breaks.push_back(t + y - k);
      return integrate([&](double s) { return arrival.rate(s) * service.ccdf(t + y - s); }, 0.0, t, breaks,
                       QuadratureOptions{1e-13});
    });
    const HatQrDecomposition h = decompose_hatQr(trace, grid, centering, service, arrival);
    e.hat_split = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k)
      e.hat_split = std::max(e.hat_split, std::abs(h.x1_parts.values[k] + h.x2.values[k] - h.qhat.values[k]));
  }
  if (!trace.initial_residuals.empty()) {
    const InitialFields f = eval_initial_fields(trace, grid);
    e.total = 0.0;
    for (std::size_t i = 0; i < grid.t.size(); ++i)
      for (std::size_t j = 0; j < grid.y.size(); ++j) {
        double initial = 0.0;
        for (double r : trace.initial_residuals)
          if (r > grid.t[i] + grid.y[j]) initial += 1.0;
        e.total = std::max(e.total, std::abs(f.total_r.at(i, j) - q.qr.at(i, j) - initial));
      }
  }
  return e;
}

inline void add_identity_rows(ExperimentReport& r, long n, const IdentityErrors& e, double tol) {
  auto row = [&](const char* label, double v) {
    if (!std::isnan(v)) r.add(judge(label, n, kNaN, kNaN, v, 0.0, tol, CheckKind::below));
  };
  row("identity_A_eq_Qt_plus_D", e.arrivals);
  row("identity_I_eq_Wt_plus_C", e.workload);
  row("identity_Qt_eq_Qr0_eq_Qett", e.qt_consistency);
  row("identity_Qe_shift", e.qe_shift);
  row("identity_X1_plus_X2_eq_Qhat", e.hat_split);
  row("identity_total_field", e.total);
}

/// max_y |F(y) - (p_c F_c(y) + p_d F_d(y))| over the grid y points.
inline double mixture_reconstruction_error(const ServiceModel& service, const std::vector<double>& ys) {
  const MixtureDecomposition d = decompose(service);
  double err = 0.0;
  for (double y : ys) err = std::max(err, std::abs(service.cdf(y) - d.reconstruct(y)));
  for (const Atom& a : d.atoms) {
    err = std::max(err, std::abs(service.cdf(a.point) - d.reconstruct(a.point)));
    const double below = std::nextafter(a.point, 0.0);
    err = std::max(err, std::abs(service.cdf(below) - d.reconstruct(below)));
  }
  return err;
}

// ---------------------------------------------------------------------------

namespace detail {

inline ExperimentReport start(const ExperimentConfig& cfg) {
  ExperimentReport r;
  r.experiment = to_string(cfg.experiment);
  r.seed = cfg.master_seed;
  r.config_echo = cfg.echo;
  return r;
}

inline SimulationTrace simulate_rep(const ExperimentConfig& cfg, long n, std::size_t rep) {
  RandomStream rng(substream_id(cfg.master_seed, to_string(cfg.experiment), static_cast<std::uint64_t>(n), rep,
                                Component::arrivals));
  std::optional<InitialCondition> init;
  if (cfg.init) init = cfg.init->condition;
  return simulate(cfg.arrival, cfg.service, init, n, cfg.grid.t.back(), rng);
}

inline bool workload_available(const LimitInputs& in) {
  return in.standard() && in.service.moments().mean_finite();
}

inline double qe_target(const LimitInputs& in, double t, double y) { return fluid_qe(in, t, std::min(y, t)); }

inline void require_standard(const LimitInputs& in, const char* what) {
  if (!in.standard()) throw std::invalid_argument(std::string(what) + " requires the standard case (constant rate)");
}

}  // namespace detail

/// Averages of LLN-scaled Q^r, Q^e (and W^t, W^r in the standard case) against
/// the fluid surfaces, per n, plus the sup-error decrease from first to last n.
inline ExperimentReport run_fwlln(const ExperimentConfig& cfg) {
  ExperimentReport r = detail::start(cfg);
  const Grid& g = cfg.grid;
  const LimitInputs in = cfg.limit_inputs();
  const bool work = detail::workload_available(in);
  const TwoParamField fqr = surface("fluid_qr", g, [&](double t, double y) { return fluid_qr(in, t, y); });
  const TwoParamField fqe = surface("fluid_qe", g, [&](double t, double y) { return detail::qe_target(in, t, y); });
  std::vector<double> sup_err;
  struct Rep {
    TwoParamField qr, qe, wt;
    IdentityErrors id;
  };
  for (long n : cfg.n_list) {
    auto reps = run_replications<Rep>(cfg.replications, cfg.threads, [&](std::size_t rep) {
      const SimulationTrace tr = detail::simulate_rep(cfg, n, rep);
      const QueueFields q = eval_queue_fields(tr, g);
      Rep out{lln_scale(q.qr, n).field, lln_scale(q.qe, n).field, {}, identity_errors(tr, g, cfg.arrival, cfg.service)};
      if (work) out.wt = lln_scale(eval_workload_fields(tr, g).wr, n).field;
      return out;
    });
    FieldMoments mqr(g), mqe(g), mw(g);
    IdentityErrors id;
    for (const auto& x : reps) {
      mqr.add(x.qr);
      mqe.add(x.qe);
      if (work) mw.add(x.wt);
      id.merge(x.id);
    }
    double sup = 0.0;
    for (std::size_t i = 0; i < g.t.size(); ++i)
      for (std::size_t j = 0; j < g.y.size(); ++j) {
        const double t = g.t[i], y = g.y[j];
        PointStat p = judge("Qr_bar", n, t, y, mqr.at(i, j).mean(), fqr.at(i, j), cfg.tol.fluid_abs, CheckKind::abs);
        sup = std::max(sup, p.abs_err);
        r.add(p);
        r.add(judge("Qe_bar", n, t, y, mqe.at(i, j).mean(), fqe.at(i, j), cfg.tol.fluid_abs, CheckKind::abs));
      }
    if (work) {
      for (std::size_t i = 0; i < g.t.size(); ++i) {
        for (std::size_t j = 0; j < g.y.size(); ++j) {
          const double target = fluid_workload(in, g.t[i], g.y[j]);
          r.add(judge(g.y[j] == 0.0 ? "Wt_bar" : "Wr_bar", n, g.t[i], g.y[j], mw.at(i, j).mean(), target,
                      cfg.tol.workload_abs, CheckKind::abs));
        }
      }
    }
    r.add(judge("sup_err_Qr_bar", n, kNaN, kNaN, sup, kNaN, kNaN, CheckKind::info));
    add_identity_rows(r, n, id, cfg.tol.identity);
    sup_err.push_back(sup);
    r.surfaces.push_back({n, mqr.mean("Qr_bar_mean")});
    r.surfaces.push_back({n, mqe.mean("Qe_bar_mean")});
  }
  r.surfaces.push_back({0, fqr});
  r.surfaces.push_back({0, fqe});
  if (sup_err.size() >= 2)
    r.add(judge("sup_err_decreases", cfg.n_list.back(), kNaN, kNaN, sup_err.back(), sup_err.front(), kNaN,
                CheckKind::less));
  r.add(judge("mixture_reconstruction", 0, kNaN, kNaN, mixture_reconstruction_error(cfg.service, g.y), 0.0,
              cfg.tol.identity, CheckKind::below));
  return r;
}

/// Sample variances of CLT-scaled fields against the Gaussian-limit variances.
inline ExperimentReport run_fclt_variance(const ExperimentConfig& cfg) {
  ExperimentReport r = detail::start(cfg);
  const Grid& g = cfg.grid;
  const LimitInputs in = cfg.limit_inputs();
  const bool continuous = !cfg.service.has_atoms();
  const TwoParamField fqr = surface("fluid_qr", g, [&](double t, double y) { return fluid_qr(in, t, y); });
  const TwoParamField fqe = surface("fluid_qe", g, [&](double t, double y) { return detail::qe_target(in, t, y); });
  struct Rep {
    TwoParamField qr, qe, x1, x2;
    std::vector<double> qir;
    IdentityErrors id;
  };
  for (long n : cfg.n_list) {
    const double rn = std::sqrt(static_cast<double>(n));
    auto reps = run_replications<Rep>(cfg.replications, cfg.threads, [&](std::size_t rep) {
      const SimulationTrace tr = detail::simulate_rep(cfg, n, rep);
      const QueueFields q = eval_queue_fields(tr, g);
      Rep out;
      out.qr = clt_scale(q.qr, n, fqr).field;
      out.qe = clt_scale(q.qe, n, fqe).field;
      out.id = identity_errors(tr, g, cfg.arrival, cfg.service);
      if (continuous) {
        const HatQrDecomposition h = decompose_hatQr(tr, g, fqr, cfg.service, cfg.arrival);
        out.x1 = h.x1;
        out.x2 = h.x2;
      }
      if (in.init) {
        const InitialFields f = eval_initial_fields(tr, g);
        for (std::size_t j = 0; j < g.y.size(); ++j)
          out.qir.push_back(rn * (f.qir[j] / static_cast<double>(n) - hqinf::detail::initial_moments(*in.init, g.y[j]).first));
      }
      return out;
    });
    FieldMoments mqr(g), mqe(g), mx1(g), mx2(g);
    std::vector<MomentAccumulator> mir(g.y.size());
    IdentityErrors id;
    for (const auto& x : reps) {
      mqr.add(x.qr);
      mqe.add(x.qe);
      if (continuous) {
        mx1.add(x.x1);
        mx2.add(x.x2);
      }
      for (std::size_t j = 0; j < x.qir.size(); ++j) mir[j].add(x.qir[j]);
      id.merge(x.id);
    }
    for (std::size_t i = 0; i < g.t.size(); ++i) {
      const double t = g.t[i];
      for (std::size_t j = 0; j < g.y.size(); ++j) {
        const double y = g.y[j];
        const double vr = var_qr(in, t, y);
        if (vr > 1e-12) {
          r.add(judge(y == 0.0 ? "var_Qt_hat" : "var_Qr_hat", n, t, y, mqr.at(i, j).variance(), vr,
                      cfg.tol.variance_rel, CheckKind::rel));
          r.add(judge("skew_Qr_hat", n, t, y, mqr.at(i, j).skewness(), 0.0, cfg.tol.skew_abs, CheckKind::info));
          r.add(judge("kurt_Qr_hat", n, t, y, mqr.at(i, j).excess_kurtosis(), 0.0, cfg.tol.kurtosis_abs,
                      CheckKind::info));
        }
        const double ve = var_qe(in, t, std::min(y, t));
        if (y > 0.0 && y <= t && ve > 1e-12)
          r.add(judge("var_Qe_hat", n, t, y, mqe.at(i, j).variance(), ve, cfg.tol.variance_rel, CheckKind::rel));
        if (continuous) {
          const VarianceComponents c = var_components(in, t, y);
          if (c.arrival > 1e-12)
            r.add(judge("var_X1_hat", n, t, y, mx1.at(i, j).variance(), c.arrival, cfg.tol.component_rel,
                        CheckKind::rel));
          if (c.service > 1e-12)
            r.add(judge("var_X2_hat", n, t, y, mx2.at(i, j).variance(), c.service, cfg.tol.component_rel,
                        CheckKind::rel));
        }
      }
    }
    if (in.init)
      for (std::size_t j = 0; j < g.y.size(); ++j) {
        const double target = hqinf::detail::initial_moments(*in.init, g.y[j]).second;
        if (target > 1e-12)
          r.add(judge("var_Qir_hat", n, kNaN, g.y[j], mir[j].variance(), target, cfg.tol.variance_rel,
                      CheckKind::rel));
      }
    add_identity_rows(r, n, id, cfg.tol.identity);
    r.surfaces.push_back({n, mqr.variance("Qr_hat_var")});
  }
  r.surfaces.push_back({0, surface("var_qr", g, [&](double t, double y) { return var_qr(in, t, y); })});
  return r;
}

/// Empirical age c.d.f. F^e_n(t,.) at the last grid t against F_e, one run per replication.
inline ExperimentReport run_age_distribution(const ExperimentConfig& cfg) {
  ExperimentReport r = detail::start(cfg);
  const LimitInputs in = cfg.limit_inputs();
  detail::require_standard(in, "age_distribution");
  if (!cfg.service.moments().mean_finite())
    throw std::invalid_argument("age_distribution requires a finite service mean");
  const double t = cfg.grid.t.back();
  const Grid g({t}, cfg.grid.y);
  std::vector<double> fe;
  for (double y : g.y) fe.push_back(std::isfinite(y) ? stationary_excess_cdf(cfg.service, y) : 1.0);
  struct Rep {
    double sup_age = 0.0, sup_residual = 0.0;
    TwoParamField age;
  };
  for (long n : cfg.n_list) {
    auto reps = run_replications<Rep>(cfg.replications, cfg.threads, [&](std::size_t rep) {
      const SimulationTrace tr = detail::simulate_rep(cfg, n, rep);
      const EmpiricalDistributions e = eval_empirical_distributions(tr, g);
      Rep out;
      for (std::size_t j = 0; j < g.y.size(); ++j) {
        out.sup_age = std::max(out.sup_age, std::abs(e.age.at(0, j) - fe[j]));
        out.sup_residual = std::max(out.sup_residual, std::abs(e.residual_ccdf.at(0, j) - (1.0 - fe[j])));
      }
      out.age = e.age;
      return out;
    });
    std::size_t passed = 0;
    FieldMoments mage(g);
    for (std::size_t k = 0; k < reps.size(); ++k) {
      PointStat p = judge("age_sup_err", n, t, kNaN, reps[k].sup_age, 0.0, cfg.tol.age_abs, CheckKind::below);
      passed += p.pass ? 1 : 0;
      p.kind = CheckKind::info;  // judged in aggregate below
      r.add(p);
      r.add(judge("residual_sup_err", n, t, kNaN, reps[k].sup_residual, 0.0, cfg.tol.age_abs, CheckKind::info));
      mage.add(reps[k].age);
    }
    r.add(judge("age_pass_fraction", n, t, kNaN, static_cast<double>(passed) / static_cast<double>(reps.size()), 1.0,
                cfg.tol.age_pass_fraction, CheckKind::at_least));
    r.surfaces.push_back({n, mage.mean("Fe_n_mean")});
  }
  r.surfaces.push_back({0, surface("Fe", g, [&](double, double y) {
                          return std::isfinite(y) ? stationary_excess_cdf(cfg.service, y) : 1.0;
                        })});
  return r;
}

/// Poisson dispersion of unscaled Q^r_n and the Bernoulli-thinning representation.
inline ExperimentReport run_poisson_property(const ExperimentConfig& cfg) {
  if (!cfg.arrival.is_poisson_family() || cfg.arrival.ca2() != 1.0)
    throw std::invalid_argument("poisson_property requires c_a²=1 Poisson arrivals");
  ExperimentReport r = detail::start(cfg);
  const Grid& g = cfg.grid;
  const LimitInputs in = cfg.limit_inputs();
  struct Rep {
    TwoParamField qr, thinned;
  };
  for (long n : cfg.n_list) {
    auto reps = run_replications<Rep>(cfg.replications, cfg.threads, [&](std::size_t rep) {
      const SimulationTrace tr = detail::simulate_rep(cfg, n, rep);
      const QueueFields q = eval_queue_fields(tr, g);
      RandomStream thin(substream_id(cfg.master_seed, to_string(cfg.experiment), static_cast<std::uint64_t>(n), rep,
                                     Component::thinning));
      Rep out{q.qr, TwoParamField("Q_thinned", g)};
      for (std::size_t i = 0; i < g.t.size(); ++i) {
        const double qt = fluid_qt(in, g.t[i]);
        for (std::size_t j = 0; j < g.y.size(); ++j) {
          const double frc = qt > 0.0 ? fluid_qr(in, g.t[i], g.y[j]) / qt : 0.0;
          out.thinned.at(i, j) = static_cast<double>(thin.binomial(static_cast<long>(q.qt.at(i, j)), frc));
        }
      }
      return out;
    });
    FieldMoments mq(g), mt(g);
    for (const auto& x : reps) {
      mq.add(x.qr);
      mt.add(x.thinned);
    }
    for (std::size_t i = 0; i < g.t.size(); ++i)
      for (std::size_t j = 0; j < g.y.size(); ++j) {
        const double t = g.t[i], y = g.y[j];
        const double mean = mq.at(i, j).mean(), var = mq.at(i, j).variance();
        if (t == 0.0 || !(mean > 0.0)) {
          r.add(judge("dispersion_skipped", n, t, y, mean, kNaN, kNaN, CheckKind::info));
          continue;
        }
        r.add(judge("dispersion", n, t, y, var / mean, 1.0, cfg.tol.dispersion_abs, CheckKind::abs));
        r.add(judge("thinned_var", n, t, y, mt.at(i, j).variance(), var, cfg.tol.thinning_rel, CheckKind::rel));
      }
    r.surfaces.push_back({n, mq.mean("Qr_mean")});
    r.surfaces.push_back({n, mq.variance("Qr_var")});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Limit paths

namespace detail {

inline PathStreams path_streams(const ExperimentConfig& cfg, std::size_t path) {
  return PathStreams::derive(cfg.master_seed, to_string(cfg.experiment), cfg.k, path);
}

}  // namespace detail

/// Monte-Carlo moments of limit paths against the analytic limits, the
/// Kiefer covariance, X2 increments, component independence, normality and
/// the k vs 2k refinement diagnostic.
inline ExperimentReport run_limit_path_validation(const ExperimentConfig& cfg, bool zero_noise = false) {
  ExperimentReport r = detail::start(cfg);
  const Grid& g = cfg.grid;
  const LimitInputs in = cfg.limit_inputs();
  const LimitPathPlan plan(in, g, {cfg.k, false, zero_noise});
  const long k = static_cast<long>(cfg.k);
  const bool has_x2 = in.decomposition.p_c > 0.0;
  struct Rep {
    TwoParamField qr, qe, x1, x2, x3;
    std::vector<double> qir;
    double kiefer_mid = 0.0, kiefer_a = 0.0, kiefer_b = 0.0;
  };
  auto reps = run_replications<Rep>(cfg.replications, cfg.threads, [&](std::size_t path) {
    PathStreams streams = detail::path_streams(cfg, path);
    const LimitPathBundle b = assemble_limit_bundle(plan, streams);
    Rep out{b.qr, b.qe, b.x1, b.x2, b.x3, b.qir.value_or(std::vector<double>{}), 0.0, 0.0, 0.0};
    RandomStream sheet_rng = streams.sheet.split();
    const SheetSample sheet = sample_sheet({1.0}, {0.3, 0.5, 0.6}, sheet_rng);
    const double scale = zero_noise ? 0.0 : 1.0;
    out.kiefer_mid = scale * kiefer_eval(sheet, 1.0, 0.5);
    out.kiefer_a = scale * kiefer_eval(sheet, 1.0, 0.3);
    out.kiefer_b = scale * kiefer_eval(sheet, 1.0, 0.6);
    return out;
  });

  FieldMoments mqr(g), mqe(g), mx1(g), mx2(g), mx3(g);
  std::vector<std::vector<CovarianceAccumulator>> cross(3, std::vector<CovarianceAccumulator>(g.size()));
  std::vector<MomentAccumulator> mir(g.y.size());
  MomentAccumulator kmid;
  CovarianceAccumulator kab;
  // X2 increments between consecutive y points at each t
  std::vector<MomentAccumulator> incr(g.size());
  for (const auto& x : reps) {
    mqr.add(x.qr);
    mqe.add(x.qe);
    mx1.add(x.x1);
    mx2.add(x.x2);
    mx3.add(x.x3);
    for (std::size_t q = 0; q < g.size(); ++q) {
      cross[0][q].add(x.x1.values[q], x.x2.values[q]);
      cross[1][q].add(x.x1.values[q], x.x3.values[q]);
      cross[2][q].add(x.x2.values[q], x.x3.values[q]);
    }
    for (std::size_t i = 0; i < g.t.size(); ++i)
      for (std::size_t j = 0; j + 1 < g.y.size(); ++j) {
        const double d = x.x2.at(i, j) - x.x2.at(i, j + 1);
        incr[i * g.y.size() + j].add(d * d);
      }
    for (std::size_t j = 0; j < x.qir.size(); ++j) mir[j].add(x.qir[j]);
    kmid.add(x.kiefer_mid);
    kab.add(x.kiefer_a, x.kiefer_b);
  }

  auto var_check = [&](const char* label, double t, double y, double estimate, double target, double tol) {
    if (zero_noise) {
      r.add(judge(label, k, t, y, estimate, 0.0, cfg.tol.identity, CheckKind::below));
    } else if (target > 1e-12) {
      r.add(judge(label, k, t, y, estimate, target, tol, CheckKind::rel));
    }
  };

  var_check("kiefer_var_U_1_0.5", 1.0, 0.5, kmid.variance(), 0.25, cfg.tol.variance_rel);
  var_check("kiefer_cov_U_1_0.3_0.6", 1.0, 0.3, kab.covariance(), 0.12, cfg.tol.component_rel);

  const LimitPathPlan fine(in, g, {2 * cfg.k, false, false});
  for (std::size_t i = 0; i < g.t.size(); ++i) {
    const double t = g.t[i];
    for (std::size_t j = 0; j < g.y.size(); ++j) {
      const double y = g.y[j];
      const std::size_t q = i * g.y.size() + j;
      const double vr = var_qr(in, t, y);
      var_check("var_Qr_hat", t, y, mqr.at(i, j).variance(), vr, cfg.tol.variance_rel);
      if (y <= t) var_check("var_Qe_hat", t, y, mqe.at(i, j).variance(), var_qe(in, t, y), cfg.tol.variance_rel);
      const VarianceComponents c = var_components(in, t, y);
      var_check("var_X1_hat", t, y, mx1.at(i, j).variance(), c.arrival, cfg.tol.component_rel);
      var_check("var_X2_hat", t, y, mx2.at(i, j).variance(), c.service, cfg.tol.component_rel);
      var_check("var_X3_hat", t, y, mx3.at(i, j).variance(), c.splitting, cfg.tol.component_rel);
      if (has_x2 && j + 1 < g.y.size() && std::isfinite(g.y[j + 1]))
        var_check("ms_increment_X2_hat", t, y, incr[q].mean(), cov_x2_increment(in, t, y, t, g.y[j + 1]),
                  cfg.tol.component_rel);
      if (zero_noise) continue;
      const char* names[] = {"corr_X1_X2", "corr_X1_X3", "corr_X2_X3"};
      const std::pair<const FieldMoments*, const FieldMoments*> pairs[] = {{&mx1, &mx2}, {&mx1, &mx3}, {&mx2, &mx3}};
      for (int p = 0; p < 3; ++p)
        if (pairs[p].first->at(i, j).variance() > 1e-12 && pairs[p].second->at(i, j).variance() > 1e-12)
          r.add(judge(names[p], k, t, y, std::abs(cross[p][q].correlation()), 0.0, cfg.tol.correlation_abs,
                      CheckKind::below));
      if (vr > 1e-12) {
        r.add(judge("skew_Qr_hat", k, t, y, mqr.at(i, j).skewness(), 0.0, cfg.tol.skew_abs, CheckKind::abs));
        r.add(judge("kurt_Qr_hat", k, t, y, mqr.at(i, j).excess_kurtosis(), 0.0, cfg.tol.kurtosis_abs,
                    CheckKind::abs));
        const double coarse = plan.discretized_var_qr(i, j), refined = fine.discretized_var_qr(i, j);
        r.add(judge("refinement_k_vs_2k", k, t, y, std::abs(coarse - refined) / refined, 0.0,
                    0.5 * cfg.tol.variance_rel, CheckKind::below));
      }
    }
  }
  if (in.init)
    for (std::size_t j = 0; j < g.y.size(); ++j)
      var_check("var_Qir_hat", kNaN, g.y[j], mir[j].variance(), hqinf::detail::initial_moments(*in.init, g.y[j]).second,
                cfg.tol.variance_rel);
  r.add(judge("grid_spacing", k, kNaN, kNaN, plan.grid_spacing(), kNaN, kNaN, CheckKind::info));
  r.surfaces.push_back({k, mqr.variance("Qr_hat_path_var")});
  r.surfaces.push_back({0, surface("var_qr", g, [&](double t, double y) { return var_qr(in, t, y); })});
  return r;
}

/// Markov decomposition: pathwise residual on the first paths and the
/// correlation between the earlier field value and Z.
inline ExperimentReport run_markov_check(const ExperimentConfig& cfg, bool zero_noise = false) {
  ExperimentReport r = detail::start(cfg);
  const LimitInputs in = cfg.limit_inputs();
  const LimitPathPlan plan(in, cfg.grid, {cfg.k, false, zero_noise});
  const MarkovSpec& m = cfg.markov;
  const long k = static_cast<long>(cfg.k);
  auto checks = run_replications<MarkovCheck>(cfg.replications, cfg.threads, [&](std::size_t path) {
    PathStreams streams = detail::path_streams(cfg, path);
    return markov_decomposition_check(plan, assemble_limit_bundle(plan, streams), m.t1, m.t2, m.y);
  });
  double worst = 0.0;
  CovarianceAccumulator corr;
  MomentAccumulator zvar;
  for (std::size_t p = 0; p < checks.size(); ++p) {
    if (p < m.residual_paths) worst = std::max(worst, checks[p].residual);
    corr.add(checks[p].earlier, checks[p].z());
    zvar.add(checks[p].z());
  }
  const double bound = cfg.tol.markov_factor * plan.grid_spacing();
  r.add(judge("markov_residual", k, m.t2, m.y, worst, 0.0, bound, CheckKind::below));
  if (!zero_noise)
    r.add(judge("markov_corr_earlier_Z", k, m.t2, m.y, std::abs(corr.correlation()), 0.0, cfg.tol.correlation_abs,
                CheckKind::below));
  r.add(judge("markov_var_Z", k, m.t2, m.y, zvar.variance(), kNaN, kNaN, CheckKind::info));
  return r;
}

/// Workload fluid means, the steady-state quadrature, and optionally the
/// limit-path variance of What^t against var_workload.
inline ExperimentReport run_workload(const ExperimentConfig& cfg) {
  ExperimentReport r = detail::start(cfg);
  const Grid& g = cfg.grid;
  const LimitInputs in = cfg.limit_inputs();
  detail::require_standard(in, "workload");
  hqinf::detail::require_workload(in);
  struct Rep {
    TwoParamField wr, input, completed;
    IdentityErrors id;
  };
  for (long n : cfg.n_list) {
    auto reps = run_replications<Rep>(cfg.replications, cfg.threads, [&](std::size_t rep) {
      const SimulationTrace tr = detail::simulate_rep(cfg, n, rep);
      const WorkloadFields w = eval_workload_fields(tr, g);
      return Rep{lln_scale(w.wr, n).field, lln_scale(w.input, n).field, lln_scale(w.completed, n).field,
                 identity_errors(tr, g, cfg.arrival, cfg.service)};
    });
    FieldMoments mw(g), mi(g), mc(g);
    IdentityErrors id;
    for (const auto& x : reps) {
      mw.add(x.wr);
      mi.add(x.input);
      mc.add(x.completed);
      id.merge(x.id);
    }
    for (std::size_t i = 0; i < g.t.size(); ++i) {
      const double t = g.t[i];
      const FluidTotals ft = fluid_totals(in, t);
      for (std::size_t j = 0; j < g.y.size(); ++j)
        r.add(judge(g.y[j] == 0.0 ? "Wt_bar" : "Wr_bar", n, t, g.y[j], mw.at(i, j).mean(),
                    fluid_workload(in, t, g.y[j]), cfg.tol.workload_abs, CheckKind::abs));
      r.add(judge("I_bar", n, t, kNaN, mi.at(i, 0).mean(), ft.input, cfg.tol.workload_abs, CheckKind::abs));
      r.add(judge("C_bar", n, t, kNaN, mc.at(i, 0).mean(), ft.completed, cfg.tol.workload_abs, CheckKind::abs));
    }
    add_identity_rows(r, n, id, cfg.tol.identity);
    r.surfaces.push_back({n, mw.mean("Wr_bar_mean")});
  }
  const Moments mom = cfg.service.moments();
  if (mom.second_moment_finite()) {
    const SteadyStateWorkload ss = steady_state_workload(in);
    r.add(judge("steady_state_workload", 0, ss.horizon, 0.0, ss.quadrature, ss.analytic, cfg.tol.steady_state,
                CheckKind::abs));
  }
  if (cfg.paths > 0) {
    const LimitPathPlan plan(in, g, {cfg.k, true, false});
    auto wt = run_replications<std::vector<double>>(cfg.paths, cfg.threads, [&](std::size_t path) {
      PathStreams streams = detail::path_streams(cfg, path);
      const LimitPathBundle b = assemble_limit_bundle(plan, streams);
      std::vector<double> out;
      for (std::size_t i = 0; i < g.t.size(); ++i) out.push_back(b.wt->at(i, 0));
      return out;
    });
    for (std::size_t i = 0; i < g.t.size(); ++i) {
      MomentAccumulator acc;
      for (const auto& x : wt) acc.add(x[i]);
      r.add(judge("var_Wt_hat", static_cast<long>(cfg.k), g.t[i], 0.0, acc.variance(), var_workload(in, g.t[i], 0.0),
                  cfg.tol.variance_rel, CheckKind::rel));
    }
  }
  r.surfaces.push_back({0, surface("fluid_wr", g, [&](double t, double y) { return fluid_workload(in, t, y); })});
  return r;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport r;
  switch (cfg.experiment) {
    case ExperimentKind::fwlln: r = run_fwlln(cfg); break;
    case ExperimentKind::fclt_variance: r = run_fclt_variance(cfg); break;
    case ExperimentKind::age_distribution: r = run_age_distribution(cfg); break;
    case ExperimentKind::poisson_property: r = run_poisson_property(cfg); break;
    case ExperimentKind::limit_path_validation: r = run_limit_path_validation(cfg); break;
    case ExperimentKind::markov_check: r = run_markov_check(cfg); break;
    case ExperimentKind::workload: r = run_workload(cfg); break;
  }
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Analytic surfaces only, in the common label,t,y,value schema.
inline std::vector<TwoParamField> analytic_surfaces(const ExperimentConfig& cfg) {
  const Grid& g = cfg.grid;
  const LimitInputs in = cfg.limit_inputs();
  std::vector<TwoParamField> out;
  out.push_back(surface("fluid_qr", g, [&](double t, double y) { return fluid_qr(in, t, y); }));
  out.push_back(surface("fluid_qe", g, [&](double t, double y) { return detail::qe_target(in, t, y); }));
  if (detail::workload_available(in))
    out.push_back(surface("fluid_wr", g, [&](double t, double y) { return fluid_workload(in, t, y); }));
  out.push_back(surface("var_qr", g, [&](double t, double y) { return var_qr(in, t, y); }));
  out.push_back(surface("var_qe", g, [&](double t, double y) { return var_qe(in, t, y); }));
  if (detail::workload_available(in))
    out.push_back(surface("var_w", g, [&](double t, double y) { return var_workload(in, t, y); }));
  if (in.init)
    out.push_back(surface("var_total", g, [&](double t, double y) { return initial_and_total_limits(in, t, y).var_tr; }));
  return out;
}

}  // namespace hqinf::harness
