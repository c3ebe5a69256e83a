#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hqinf/arrival_models.hpp"
#include "hqinf/random.hpp"
#include "hqinf/service_models.hpp"
#include "hqinf/statistics.hpp"

namespace hqinf {

/// Rectangular evaluation skeleton. The last y point may be +inf.
struct Grid {
  std::vector<double> t;
  std::vector<double> y;

  Grid() = default;
  Grid(std::vector<double> t_points, std::vector<double> y_points) : t(std::move(t_points)), y(std::move(y_points)) {
    validate();
  }

  void validate() const {
    check_axis(t, "t", false);
    check_axis(y, "y", true);
  }

  std::size_t size() const { return t.size() * y.size(); }
  bool operator==(const Grid&) const = default;

  std::optional<std::size_t> t_index(double v) const { return find(t, v); }
  std::optional<std::size_t> y_index(double v) const { return find(y, v); }

  static std::vector<double> linspace(double lo, double hi, std::size_t count) {
    if (count == 1) return {lo};
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / (count - 1);
    out.back() = hi;
    return out;
  }

 private:
  static std::optional<std::size_t> find(const std::vector<double>& axis, double v) {
    auto it = std::lower_bound(axis.begin(), axis.end(), v);
    if (it != axis.end() && *it == v) return static_cast<std::size_t>(it - axis.begin());
    return std::nullopt;
  }
  static void check_axis(const std::vector<double>& axis, const char* name, bool allow_inf_tail) {
    if (axis.empty()) throw std::invalid_argument(std::string("grid: ") + name + " points must be nonempty");
    for (std::size_t i = 0; i < axis.size(); ++i) {
      const double v = axis[i];
      const bool inf_ok = allow_inf_tail && i + 1 == axis.size() && v == std::numeric_limits<double>::infinity();
      if (std::isnan(v) || (!std::isfinite(v) && !inf_ok))
        throw std::invalid_argument(std::string("grid: ") + name + " points must be finite");
      if (v < 0.0) throw std::invalid_argument(std::string("grid: ") + name + " points must be nonnegative");
      if (i > 0 && !(v > axis[i - 1]))
        throw std::invalid_argument(std::string("grid: ") + name + " points must be strictly increasing (duplicate or unsorted)");
    }
  }
};

/// Values over a Grid, row-major in (t, y).
struct TwoParamField {
  std::string label;
  Grid grid;
  std::vector<double> values;

  TwoParamField() = default;
  TwoParamField(std::string name, Grid g, double fill = 0.0)
      : label(std::move(name)), grid(std::move(g)), values(grid.size(), fill) {}

  double& at(std::size_t i, std::size_t j) { return values[i * grid.y.size() + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * grid.y.size() + j]; }
  std::size_t rows() const { return grid.t.size(); }
  std::size_t cols() const { return grid.y.size(); }
};

/// Initial customers: count fixed at round(density n) or Poisson(density n),
/// residual service times i.i.d. from `residual`.
struct InitialCondition {
  enum class CountLaw { fixed, poisson };
  CountLaw count_law = CountLaw::fixed;
  double density = 0.0;
  ServiceModel residual = ServiceModel::exponential(1.0);
};

struct SimulationTrace {
  long n = 1;
  double horizon = 0.0;
  std::vector<double> arrivals;
  std::vector<double> services;
  long initial_count = 0;
  std::vector<double> initial_residuals;

  std::size_t arrived_by(double t) const {
    return static_cast<std::size_t>(std::upper_bound(arrivals.begin(), arrivals.end(), t) - arrivals.begin());
  }
};

/// One realized system. Arrivals, services and the initial state come from
/// separate child streams of `rng`, so they are mutually independent.
inline SimulationTrace simulate(const ArrivalModel& arrival, const ServiceModel& service,
                                const std::optional<InitialCondition>& init, long n, double horizon,
                                RandomStream& rng) {
  detail::require(n >= 1, "simulate: n must be >= 1");
  detail::require(std::isfinite(horizon) && horizon > 0.0, "simulate: horizon must be positive");
  RandomStream arrival_rng = rng.split();
  RandomStream service_rng = rng.split();
  RandomStream initial_rng = rng.split();

  SimulationTrace trace;
  trace.n = n;
  trace.horizon = horizon;
  trace.arrivals = arrival.generate_arrivals(n, horizon, arrival_rng);
  trace.services.reserve(trace.arrivals.size());
  for (std::size_t i = 0; i < trace.arrivals.size(); ++i) trace.services.push_back(service.sample(service_rng));

  if (init) {
    detail::require(init->density >= 0.0, "simulate: initial density must be nonnegative");
    const double mean = init->density * static_cast<double>(n);
    trace.initial_count = init->count_law == InitialCondition::CountLaw::fixed ? std::lround(mean)
                                                                               : initial_rng.poisson(mean);
    trace.initial_residuals.reserve(static_cast<std::size_t>(trace.initial_count));
    for (long j = 0; j < trace.initial_count; ++j) trace.initial_residuals.push_back(init->residual.sample(initial_rng));
  }
  return trace;
}

struct QueueFields {
  TwoParamField qr, qe, qt, d;
};

struct WorkloadFields {
  TwoParamField wr, wt, input, completed;
};

struct EmpiricalDistributions {
  TwoParamField age, residual_ccdf;
};

struct InitialFields {
  std::vector<double> y;
  std::vector<double> qir;
  TwoParamField total_r;
};

namespace detail {

inline void check_within_horizon(const SimulationTrace& trace, const Grid& grid) {
  grid.validate();
  if (grid.t.back() > trace.horizon)
    throw std::invalid_argument("grid t points exceed the simulation horizon");
}

/// Departure epochs of customers arrived by t, sorted.
inline std::vector<double> sorted_departures(const SimulationTrace& trace, std::size_t arrived) {
  std::vector<double> dep(arrived);
  for (std::size_t i = 0; i < arrived; ++i) dep[i] = trace.arrivals[i] + trace.services[i];
  std::sort(dep.begin(), dep.end());
  return dep;
}

inline double count_above(const std::vector<double>& sorted, double level) {
  return static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), level));
}

}  // namespace detail

/// Q^r(t,y): arrivals by t still present at t+y (strict). Q^e(t,y): arrivals
/// in (t-y, t] still present at t; Q^e(t,y) = Q^t(t) for y > t.
/// D(t) counts departures in [0, t] directly.
inline QueueFields eval_queue_fields(const SimulationTrace& trace, const Grid& grid) {
  detail::check_within_horizon(trace, grid);
  QueueFields f{TwoParamField("Qr", grid), TwoParamField("Qe", grid), TwoParamField("Qt", grid),
                TwoParamField("D", grid)};
  for (std::size_t i = 0; i < grid.t.size(); ++i) {
    const double t = grid.t[i];
    const std::size_t arrived = trace.arrived_by(t);
    const auto dep = detail::sorted_departures(trace, arrived);
    const double qt = detail::count_above(dep, t);
    const double departed = static_cast<double>(arrived) - qt;
    for (std::size_t j = 0; j < grid.y.size(); ++j) {
      const double y = grid.y[j];
      f.qr.at(i, j) = detail::count_above(dep, t + y);
      f.qt.at(i, j) = qt;
      f.d.at(i, j) = departed;
      if (y > t) {
        f.qe.at(i, j) = qt;
      } else {
        double c = 0.0;
        for (std::size_t k = trace.arrived_by(t - y); k < arrived; ++k)
          if (trace.arrivals[k] + trace.services[k] > t) c += 1.0;
        f.qe.at(i, j) = c;
      }
    }
  }
  return f;
}

/// W^r(t,y) = sum (tau+eta-t-y)^+, I(t) = sum eta, C(t) = sum min(eta, t-tau),
/// each over arrivals by t. C is accumulated directly, not as I - W^t.
inline WorkloadFields eval_workload_fields(const SimulationTrace& trace, const Grid& grid) {
  detail::check_within_horizon(trace, grid);
  WorkloadFields f{TwoParamField("Wr", grid), TwoParamField("Wt", grid), TwoParamField("I", grid),
                   TwoParamField("C", grid)};
  for (std::size_t i = 0; i < grid.t.size(); ++i) {
    const double t = grid.t[i];
    const std::size_t arrived = trace.arrived_by(t);
    const auto dep = detail::sorted_departures(trace, arrived);
    // suffix sums of departure epochs
    std::vector<long double> suffix(dep.size() + 1, 0.0L);
    for (std::size_t k = dep.size(); k-- > 0;) suffix[k] = suffix[k + 1] + dep[k];

    CompensatedSum input, completed, total;
    for (std::size_t k = 0; k < arrived; ++k) {
      const double eta = trace.services[k];
      input.add(eta);
      completed.add(std::min(eta, t - trace.arrivals[k]));
      total.add(std::max(0.0, trace.arrivals[k] + eta - t));
    }
    for (std::size_t j = 0; j < grid.y.size(); ++j) {
      const double level = t + grid.y[j];
      double wr = 0.0;
      if (std::isfinite(level)) {
        const std::size_t idx =
            static_cast<std::size_t>(std::upper_bound(dep.begin(), dep.end(), level) - dep.begin());
        wr = static_cast<double>(suffix[idx] - static_cast<long double>(dep.size() - idx) * level);
      }
      f.wr.at(i, j) = grid.y[j] == 0.0 ? total.value() : std::max(0.0, wr);
      f.wt.at(i, j) = total.value();
      f.input.at(i, j) = input.value();
      f.completed.at(i, j) = completed.value();
    }
  }
  return f;
}

inline EmpiricalDistributions eval_empirical_distributions(const SimulationTrace& trace, const Grid& grid) {
  const QueueFields q = eval_queue_fields(trace, grid);
  EmpiricalDistributions e{TwoParamField("Fe", grid), TwoParamField("Frc", grid)};
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double qt = q.qt.values[k];
    e.age.values[k] = qt > 0.0 ? q.qe.values[k] / qt : 0.0;
    e.residual_ccdf.values[k] = qt > 0.0 ? q.qr.values[k] / qt : 0.0;
  }
  return e;
}

/// Q^{i,r}(y) over the y-grid and Q^{T,r}(t,y), counted over the pooled
/// departure epochs of initial and new customers.
inline InitialFields eval_initial_fields(const SimulationTrace& trace, const Grid& grid) {
  detail::check_within_horizon(trace, grid);
  std::vector<double> res = trace.initial_residuals;
  std::sort(res.begin(), res.end());
  InitialFields out{grid.y, {}, TwoParamField("QTr", grid)};
  for (double y : grid.y) out.qir.push_back(detail::count_above(res, y));
  for (std::size_t i = 0; i < grid.t.size(); ++i) {
    std::vector<double> pooled = detail::sorted_departures(trace, trace.arrived_by(grid.t[i]));
    pooled.insert(pooled.end(), res.begin(), res.end());
    std::sort(pooled.begin(), pooled.end());
    for (std::size_t j = 0; j < grid.y.size(); ++j)
      out.total_r.at(i, j) = detail::count_above(pooled, grid.t[i] + grid.y[j]);
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV rows: label,t,y,value
inline void write_field_csv(std::ostream& os, const TwoParamField& field, bool header = true) {
  if (header) os << "label,t,y,value\n";
  for (std::size_t i = 0; i < field.rows(); ++i)
    for (std::size_t j = 0; j < field.cols(); ++j)
      os << field.label << ',' << format_number(field.grid.t[i]) << ',' << format_number(field.grid.y[j]) << ','
         << format_number(field.at(i, j)) << '\n';
}

inline void write_trace_csv(std::ostream& os, const SimulationTrace& trace) {
  os << "i,tau,eta\n";
  for (std::size_t i = 0; i < trace.arrivals.size(); ++i)
    os << i + 1 << ',' << format_number(trace.arrivals[i]) << ',' << format_number(trace.services[i]) << '\n';
}

}  // namespace hqinf
