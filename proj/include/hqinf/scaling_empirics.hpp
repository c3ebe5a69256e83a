#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hqinf/arrival_models.hpp"
#include "hqinf/quadrature.hpp"
#include "hqinf/queue_sim.hpp"
#include "hqinf/service_models.hpp"

namespace hqinf {

enum class Scaling { lln, clt };

struct ScaledField {
  TwoParamField field;
  long n = 1;
  Scaling scaling = Scaling::lln;
  std::optional<TwoParamField> centering;
};

inline ScaledField lln_scale(const TwoParamField& base, long n) {
  detail::require(n >= 1, "lln_scale: n must be >= 1");
  ScaledField out{base, n, Scaling::lln, std::nullopt};
  for (double& v : out.field.values) v /= static_cast<double>(n);
  return out;
}

/// sqrt(n) (base / n - centering)
inline ScaledField clt_scale(const TwoParamField& base, long n, const TwoParamField& centering) {
  detail::require(n >= 1, "clt_scale: n must be >= 1");
  if (!(centering.grid == base.grid)) throw std::invalid_argument("clt_scale: centering grid does not match field grid");
  ScaledField out{base, n, Scaling::clt, centering};
  const double nd = static_cast<double>(n);
  const double rn = std::sqrt(nd);
  for (std::size_t k = 0; k < base.values.size(); ++k)
    out.field.values[k] = rn * (base.values[k] / nd - centering.values[k]);
  return out;
}

/// Kbar, Khat over a (t, x) grid.
struct EmpiricalProcessField {
  TwoParamField kbar, khat;
};

/// Kbar_n(t,x) = (1/n) sum_{i <= floor(nt)} 1(eta_i <= x), centered by
/// (floor(nt)/n) F(x).
inline EmpiricalProcessField sequential_empirical(const std::vector<double>& services, long n, const Grid& grid,
                                                  const ServiceModel& model) {
  detail::require(n >= 1, "sequential_empirical: n must be >= 1");
  grid.validate();
  const double nd = static_cast<double>(n);
  const auto needed = static_cast<std::size_t>(std::floor(nd * grid.t.back()));
  if (services.size() < needed) throw std::invalid_argument("sequential_empirical: insufficient service samples");
  EmpiricalProcessField out{TwoParamField("Kbar", grid), TwoParamField("Khat", grid)};
  const double rn = std::sqrt(nd);
  for (std::size_t i = 0; i < grid.t.size(); ++i) {
    const auto m = static_cast<std::size_t>(std::floor(nd * grid.t[i]));
    std::vector<double> head(services.begin(), services.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(head.begin(), head.end());
    for (std::size_t j = 0; j < grid.y.size(); ++j) {
      const double x = grid.y[j];
      const double count = static_cast<double>(std::upper_bound(head.begin(), head.end(), x) - head.begin());
      out.kbar.at(i, j) = count / nd;
      out.khat.at(i, j) = (count - static_cast<double>(m) * model.cdf(x)) / rn;
    }
  }
  return out;
}

/// Rhat_n(t,x) = (1/sqrt n) sum_{i <= A_n(t)} (1(eta_i <= x) - F(x)).
inline TwoParamField composed_empirical(const SimulationTrace& trace, const Grid& grid, const ServiceModel& model) {
  detail::check_within_horizon(trace, grid);
  TwoParamField out("Rhat", grid);
  const double rn = std::sqrt(static_cast<double>(trace.n));
  for (std::size_t i = 0; i < grid.t.size(); ++i) {
    const std::size_t arrived = trace.arrived_by(grid.t[i]);
    std::vector<double> head(trace.services.begin(), trace.services.begin() + static_cast<std::ptrdiff_t>(arrived));
    std::sort(head.begin(), head.end());
    for (std::size_t j = 0; j < grid.y.size(); ++j) {
      const double x = grid.y[j];
      const double count = static_cast<double>(std::upper_bound(head.begin(), head.end(), x) - head.begin());
      out.at(i, j) = (count - static_cast<double>(arrived) * model.cdf(x)) / rn;
    }
  }
  return out;
}

/// Per-customer component labels: -1 for the continuous part, otherwise the
/// index of the matching atom in the decomposition order.
struct ArrivalSplit {
  std::vector<int> labels;
  std::size_t atom_count = 0;

  struct Counts {
    long continuous = 0;
    long discrete = 0;
    std::vector<long> per_atom;
  };

  Counts counts(const SimulationTrace& trace, double t) const {
    Counts c;
    c.per_atom.assign(atom_count, 0);
    const std::size_t arrived = trace.arrived_by(t);
    for (std::size_t i = 0; i < arrived; ++i) {
      if (labels[i] < 0) {
        ++c.continuous;
      } else {
        ++c.discrete;
        ++c.per_atom[static_cast<std::size_t>(labels[i])];
      }
    }
    return c;
  }
};

inline ArrivalSplit split_arrivals(const SimulationTrace& trace, const MixtureDecomposition& decomposition) {
  ArrivalSplit split;
  split.atom_count = decomposition.atoms.size();
  split.labels.reserve(trace.services.size());
  for (double eta : trace.services) {
    int label = -1;
    for (std::size_t i = 0; i < decomposition.atoms.size(); ++i)
      if (decomposition.atoms[i].point == eta) {
        label = static_cast<int>(i);
        break;
      }
    if (label < 0 && decomposition.p_c == 0.0)
      throw std::invalid_argument("split_arrivals: service value matches no atom of a purely atomic model");
    split.labels.push_back(label);
  }
  return split;
}

struct HatQrDecomposition {
  TwoParamField qhat;      // Qhat^r_n
  TwoParamField x1;        // Qhat^r_n - X2
  TwoParamField x2;        // customer-wise martingale part
  TwoParamField x1_parts;  // integration-by-parts evaluation of X1
};

/// Qhat^r_n = X_{n,1} + X_{n,2} with
///   X_{n,2}(t,y) = (1/sqrt n) sum_{tau_i <= t} [1(tau_i + eta_i > t+y) - F^c(t+y-tau_i)],
///   X_{n,1} = Qhat^r_n - X_{n,2}.
/// x1_parts is the independent route
///   F^c(y) Ahat_n(t) - int_0^t Ahat_n(s-) dF(t+y-s),
/// where the step part of Ahat_n integrates exactly and the a-bar part by quadrature.
inline HatQrDecomposition decompose_hatQr(const SimulationTrace& trace, const Grid& grid, const TwoParamField& qbar_r,
                                          const ServiceModel& model, const ArrivalModel& arrival) {
  if (model.has_atoms())
    throw std::invalid_argument(
        "decompose_hatQr: service c.d.f. has atoms; the martingale part is not defined as a D_D-valued process "
        "for discontinuous F, so only the sum Qhat^r_n is available");
  detail::check_within_horizon(trace, grid);
  if (!(qbar_r.grid == grid)) throw std::invalid_argument("decompose_hatQr: centering grid does not match");

  const QueueFields q = eval_queue_fields(trace, grid);
  const double nd = static_cast<double>(trace.n);
  const double rn = std::sqrt(nd);
  HatQrDecomposition out{clt_scale(q.qr, trace.n, qbar_r).field, TwoParamField("X1n", grid),
                         TwoParamField("X2n", grid), TwoParamField("X1n_parts", grid)};
  out.qhat.label = "Qhat_r";

  for (std::size_t i = 0; i < grid.t.size(); ++i) {
    const double t = grid.t[i];
    const std::size_t arrived = trace.arrived_by(t);
    const double abar_t = arrival.cumulative_rate(t);
    const double ahat_t = rn * (static_cast<double>(arrived) / nd - abar_t);
    for (std::size_t j = 0; j < grid.y.size(); ++j) {
      const double y = grid.y[j];
      CompensatedSum x2, steps;
      for (std::size_t k = 0; k < arrived; ++k) {
        const double tau = trace.arrivals[k];
        const double present = tau + trace.services[k] > t + y ? 1.0 : 0.0;
        x2.add(present - model.ccdf(t + y - tau));
        steps.add(model.cdf(t + y - tau) - model.cdf(y));
      }
      out.x2.at(i, j) = x2.value() / rn;
      out.x1.at(i, j) = out.qhat.at(i, j) - out.x2.at(i, j);

      // int_0^t abar(s) f(t+y-s) ds = -abar(t) F(y) + int_0^t lambda(s) F(t+y-s) ds
      std::vector<double> breaks;
      for (double k : model.kinks()) breaks.push_back(t + y - k);
      const double drift = -abar_t * model.cdf(y) +
                           integrate([&](double s) { return arrival.rate(s) * model.cdf(t + y - s); }, 0.0, t, breaks,
                                     QuadratureOptions{1e-13});
      out.x1_parts.at(i, j) = model.ccdf(y) * ahat_t - steps.value() / rn + rn * drift;
    }
  }
  return out;
}

}  // namespace hqinf
