#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hqinf/arrival_models.hpp"
#include "hqinf/quadrature.hpp"
#include "hqinf/queue_sim.hpp"
#include "hqinf/service_models.hpp"

namespace hqinf {

struct InitialLimitInputs {
  double density = 0.0;   // qbar^{i,t}
  double variance = 0.0;  // Var(Qhat^{i,t})
  ServiceModel residual = ServiceModel::exponential(1.0);
};

struct LimitInputs {
  RateFunction rate;
  double ca2;
  ServiceModel service;
  MixtureDecomposition decomposition;
  std::optional<InitialLimitInputs> init;

  LimitInputs(RateFunction r, double c, ServiceModel s, std::optional<InitialLimitInputs> i = std::nullopt)
      : rate(r), ca2(c), service(std::move(s)), decomposition(decompose(service)), init(std::move(i)) {
    detail::require(ca2 >= 0.0 && std::isfinite(ca2), "limit inputs: c_a^2 must be finite and nonnegative");
    if (init) detail::require(init->density >= 0.0 && init->variance >= 0.0, "limit inputs: initial density and variance must be nonnegative");
  }

  static LimitInputs from(const ArrivalModel& arrival, ServiceModel service,
                          std::optional<InitialLimitInputs> init = std::nullopt) {
    return LimitInputs(arrival.rate_function(), arrival.ca2(), std::move(service), std::move(init));
  }

  double abar(double t) const { return rate.cumulative(t); }
  double lambda(double s) const { return rate.rate(s); }
  bool standard() const { return rate.kind() == RateFunction::Kind::constant; }
};

namespace detail {

inline QuadratureOptions tight_quadrature() {
  QuadratureOptions o;
  o.abs_tol = 1e-11;
  return o;
}

/// int_lo^hi g(s) lambda(s) ds with breakpoints where shift - s hits a kink of F.
/// Tight by default: the variance parts are compared against the total at 1e-8.
template <class G>
double against_rate(const LimitInputs& in, G&& g, double lo, double hi, double shift,
                    const QuadratureOptions& opts = tight_quadrature()) {
  lo = std::max(lo, 0.0);
  if (!(hi > lo)) return 0.0;
  std::vector<double> breaks;
  for (double k : in.service.kinks()) breaks.push_back(shift - k);
  return integrate([&](double s) { return g(s) * in.lambda(s); }, lo, hi, breaks, opts);
}

inline void require_time(double t, double y) {
  if (!(t >= 0.0) || !(y >= 0.0) || !std::isfinite(t)) throw std::invalid_argument("analytic limits: need t, y >= 0");
}

inline double continuous_ccdf(const LimitInputs& in, double x) { return in.decomposition.continuous_ccdf(x); }
inline double continuous_cdf(const LimitInputs& in, double x) { return in.decomposition.continuous_cdf(x); }

}  // namespace detail

/// qbar^r(t,y) = int_0^t F^c(t+y-s) dabar(s)
inline double fluid_qr(const LimitInputs& in, double t, double y) {
  detail::require_time(t, y);
  if (!std::isfinite(y)) return 0.0;
  return detail::against_rate(in, [&](double s) { return in.service.ccdf(t + y - s); }, 0.0, t, t + y);
}

/// qbar^e(t,y) = int_{t-y}^t F^c(t-s) dabar(s), 0 <= y <= t
inline double fluid_qe(const LimitInputs& in, double t, double y) {
  detail::require_time(t, y);
  if (y > t) throw std::invalid_argument("fluid_qe: y must not exceed t");
  return detail::against_rate(in, [&](double s) { return in.service.ccdf(t - s); }, t - y, t, t);
}

inline double fluid_qt(const LimitInputs& in, double t) { return fluid_qr(in, t, 0.0); }

namespace detail {

inline void require_workload(const LimitInputs& in) {
  if (!in.standard()) throw std::invalid_argument("workload limits require the standard case abar(t) = lambda t");
  if (!in.service.moments().mean_finite()) throw std::domain_error("workload limits require a finite service mean");
}

/// G(v) = int_v^inf F^c = E[eta] - int_0^v F^c
inline double tail_work(const LimitInputs& in, double v) {
  return std::max(0.0, in.service.moments().mean - in.service.integrated_ccdf(v));
}

}  // namespace detail

/// wbar^r(t,y) = (lambda/mu) int_0^t F_e^c(y+s) ds = lambda int_0^t G(y+s) ds
inline double fluid_workload(const LimitInputs& in, double t, double y) {
  detail::require_time(t, y);
  detail::require_workload(in);
  if (!std::isfinite(y) || t == 0.0) return 0.0;
  const double lam = in.lambda(0.0);
  std::vector<double> breaks;
  for (double k : in.service.kinks()) breaks.push_back(k - y);
  return lam * integrate([&](double s) { return detail::tail_work(in, y + s); }, 0.0, t, breaks);
}

struct FluidTotals {
  double wt, input, completed;
};

inline FluidTotals fluid_totals(const LimitInputs& in, double t) {
  const double wt = fluid_workload(in, t, 0.0);
  const double input = in.lambda(0.0) * t * in.service.moments().mean;
  return {wt, input, input - wt};
}

struct SteadyStateWorkload {
  double quadrature;   // wbar^t(T_inf) plus tail bound integral
  double analytic;     // lambda (c_s^2 + 1) / (2 mu^2)
  double horizon;      // T_inf
};

/// wbar^t at T_inf = 40/mu (extended to where F^c < 1e-12 if later), with the
/// remaining tail integrated in closed form from G.
inline SteadyStateWorkload steady_state_workload(const LimitInputs& in) {
  detail::require_workload(in);
  const Moments m = in.service.moments();
  if (!m.second_moment_finite()) throw std::domain_error("steady-state workload requires E[eta^2] < inf");
  const double horizon = std::max(40.0 * m.mean, in.service.tail_bound(1e-12));
  const double lam = in.lambda(0.0);
  std::vector<double> breaks = in.service.kinks();
  QuadratureOptions opts;
  opts.abs_tol = 1e-11;
  const double body = lam * integrate([&](double s) { return detail::tail_work(in, s); }, 0.0, horizon, breaks, opts);
  return {body, lam * (m.scv + 1.0) * m.mean * m.mean / 2.0, horizon};
}

struct AgeResidual {
  double age;            // fbar^e
  double residual_ccdf;  // fbar^{r,c}
};

inline AgeResidual fluid_age_residual(const LimitInputs& in, double t, double y) {
  const double qt = fluid_qt(in, t);
  if (!(qt > 0.0)) throw std::domain_error("fluid_age_residual: qbar^t(t) = 0");
  const double qe = y >= t ? qt : fluid_qe(in, t, y);
  return {qe / qt, fluid_qr(in, t, y) / qt};
}

/// sigma^2_{q,r}(t,y) = (c_a^2 - 1) int F^c(t+y-s)^2 dabar + int F^c(t+y-s) dabar
inline double var_qr(const LimitInputs& in, double t, double y) {
  detail::require_time(t, y);
  if (!std::isfinite(y)) return 0.0;
  const double sq = detail::against_rate(in, [&](double s) { const double c = in.service.ccdf(t + y - s); return c * c; },
                                         0.0, t, t + y);
  return (in.ca2 - 1.0) * sq + fluid_qr(in, t, y);
}

/// sigma^2_{q,e}(t,y); y > t is read as y = t.
inline double var_qe(const LimitInputs& in, double t, double y) {
  detail::require_time(t, y);
  y = std::min(y, t);
  const double sq = detail::against_rate(in, [&](double s) { const double c = in.service.ccdf(t - s); return c * c; },
                                         t - y, t, t);
  return (in.ca2 - 1.0) * sq + fluid_qe(in, t, y);
}

struct VarianceComponents {
  double arrival;    // sigma^2_{1,r}
  double service;    // sigma^2_{2,c,r}
  double splitting;  // sigma^2_{3,r}
  double total() const { return arrival + service + splitting; }
};

namespace detail {

/// Lower end of the window (t - (x - y)^+, t], clamped at 0.
inline double atom_window_start(double t, double y, double x) { return std::max(0.0, t - std::max(0.0, x - y)); }

}  // namespace detail

/// Variances of the three independent parts of Qhat^r:
///   arrival   c_a^2 int F^c(t+y-s)^2 dabar
///   service   p_c int F_c F_c^c(t+y-s) dabar
///   splitting Var of int F_c^c dS^c(abar) + sum_i [S^d_i(abar(t)) - S^d_i(abar(t - (x_i - y)^+))]
/// The splitting cross term between S^c and S^d_i covers only the window
/// (t - (x_i - y)^+, t] on which the atom increment lives.
inline VarianceComponents var_components(const LimitInputs& in, double t, double y) {
  detail::require_time(t, y);
  const auto& d = in.decomposition;
  VarianceComponents v{};
  if (!std::isfinite(y) || t == 0.0) return v;
  const double shift = t + y;
  v.arrival = in.ca2 * detail::against_rate(in, [&](double s) { const double c = in.service.ccdf(shift - s); return c * c; },
                                            0.0, t, shift);
  if (d.p_c > 0.0)
    v.service = d.p_c * detail::against_rate(in, [&](double s) {
      const double c = detail::continuous_ccdf(in, shift - s);
      return c * (1.0 - c);
    }, 0.0, t, shift);

  if (d.p_c > 0.0 && d.p_d > 0.0)
    v.splitting += d.p_c * d.p_d * detail::against_rate(in, [&](double s) {
      const double c = detail::continuous_ccdf(in, shift - s);
      return c * c;
    }, 0.0, t, shift);
  const double abar_t = in.abar(t);
  for (std::size_t i = 0; i < d.atoms.size(); ++i) {
    const double pi = d.p_d * d.atoms[i].mass;
    const double lo_i = detail::atom_window_start(t, y, d.atoms[i].point);
    v.splitting += pi * (1.0 - pi) * (abar_t - in.abar(lo_i));
    for (std::size_t j = i + 1; j < d.atoms.size(); ++j) {
      const double pj = d.p_d * d.atoms[j].mass;
      const double lo = detail::atom_window_start(t, y, std::min(d.atoms[i].point, d.atoms[j].point));
      v.splitting -= 2.0 * pi * pj * (abar_t - in.abar(lo));
    }
    if (d.p_c > 0.0)
      v.splitting -= 2.0 * d.p_c * pi *
                     detail::against_rate(in, [&](double s) { return detail::continuous_ccdf(in, shift - s); }, lo_i, t, shift);
  }
  return v;
}

/// The splitting variance with the cross term integrated against
/// d(abar(s) - abar(s - (x_i - y)^+)) over all of [0, t], as that term is
/// sometimes written. Kept for comparison against var_components.
inline double var_splitting_full_range_cross(const LimitInputs& in, double t, double y) {
  const auto& d = in.decomposition;
  VarianceComponents v = var_components(in, t, y);
  double s3 = v.splitting;
  if (d.p_c == 0.0) return s3;
  const double shift = t + y;
  for (const Atom& a : d.atoms) {
    const double pi = d.p_d * a.mass;
    const double lo_i = detail::atom_window_start(t, y, a.point);
    // undo the windowed cross term
    s3 += 2.0 * d.p_c * pi *
          detail::against_rate(in, [&](double s) { return detail::continuous_ccdf(in, shift - s); }, lo_i, t, shift);
    const double delta = std::max(0.0, a.point - y);
    std::vector<double> breaks;
    for (double k : in.service.kinks()) breaks.push_back(shift - k);
    breaks.push_back(delta);
    const double cross = integrate([&](double s) {
      const double shifted = s > delta ? in.lambda(s - delta) : 0.0;
      return detail::continuous_ccdf(in, shift - s) * (in.lambda(s) - shifted);
    }, 0.0, t, breaks);
    s3 -= 2.0 * d.p_c * pi * cross;
  }
  return s3;
}

/// sigma_w^2(t,y) = int_0^t [c_a^2 G(v)^2 + 2 J(v)] dabar(s), v = t+y-s,
/// G(v) = int_v^inf F^c, J(v) = int_v^{x_max} F G, x_max with F^c(x_max) < 1e-6.
inline double var_workload(const LimitInputs& in, double t, double y) {
  detail::require_time(t, y);
  if (!in.service.moments().mean_finite()) throw std::domain_error("var_workload: infinite service mean");
  if (t == 0.0 || !std::isfinite(y)) return 0.0;
  const double x_max = in.service.tail_bound(1e-6);
  const std::vector<double> kinks = in.service.kinks();
  QuadratureOptions inner;
  inner.abs_tol = 1e-10;
  auto J = [&](double v) {
    if (v >= x_max) return 0.0;
    return integrate([&](double a) { return in.service.cdf(a) * detail::tail_work(in, a); }, v, x_max, kinks, inner);
  };
  const double shift = t + y;
  return detail::against_rate(in, [&](double s) {
    const double v = shift - s;
    const double g = detail::tail_work(in, v);
    return in.ca2 * g * g + 2.0 * J(v);
  }, 0.0, t, shift);
}

/// E[(X2(t,y) - X2(t',y'))^2] for t <= t', y <= y':
///   int_0^t (b - a)(1 - (b - a)) dabar^c + int_t^{t'} b (1 - b) dabar^c,
/// a = F_c(t+y-u), b = F_c(t'+y'-u).
inline double cov_x2_increment(const LimitInputs& in, double t, double y, double t2, double y2) {
  detail::require_time(t, y);
  detail::require_time(t2, y2);
  if (t > t2 || y > y2) throw std::invalid_argument("cov_x2_increment: need t <= t' and y <= y'");
  const double pc = in.decomposition.p_c;
  if (pc == 0.0) return 0.0;
  std::vector<double> breaks;
  for (double k : in.service.kinks()) {
    breaks.push_back(t + y - k);
    breaks.push_back(t2 + y2 - k);
  }
  const double first = integrate([&](double u) {
    const double a = detail::continuous_cdf(in, t + y - u);
    const double b = detail::continuous_cdf(in, t2 + y2 - u);
    return (b - a) * (1.0 - (b - a)) * in.lambda(u);
  }, 0.0, t, breaks);
  const double second = integrate([&](double u) {
    const double b = detail::continuous_cdf(in, t2 + y2 - u);
    return b * (1.0 - b) * in.lambda(u);
  }, t, t2, breaks);
  return pc * (first + second);
}

/// The increment formula with the (t, t'] contribution dropped; agrees with
/// cov_x2_increment when t = t'.
inline double cov_x2_increment_common_range(const LimitInputs& in, double t, double y, double t2, double y2) {
  if (t > t2 || y > y2) throw std::invalid_argument("cov_x2_increment: need t <= t' and y <= y'");
  const double pc = in.decomposition.p_c;
  if (pc == 0.0) return 0.0;
  return pc * integrate([&](double u) {
    const double a = detail::continuous_cdf(in, t + y - u);
    const double b = detail::continuous_cdf(in, t2 + y2 - u);
    return (b - a) * (1.0 + a - b) * in.lambda(u);
  }, 0.0, t);
}

struct InitialTotalLimits {
  double qir;      // qbar^{i,r}(y)
  double var_ir;   // Var Qhat^{i,r}(y)
  double qtr;      // qbar^{T,r}(t,y), initial part at t+y
  double var_tr;   // Var Qhat^{T,r}(t,y)
};

namespace detail {

inline std::pair<double, double> initial_moments(const InitialLimitInputs& init, double y) {
  if (!std::isfinite(y)) return {0.0, 0.0};
  const double fc = init.residual.ccdf(y);
  return {fc * init.density, fc * fc * init.variance + init.density * (1.0 - fc) * fc};
}

}  // namespace detail

inline InitialTotalLimits initial_and_total_limits(const LimitInputs& in, double t, double y) {
  if (!in.init) throw std::invalid_argument("initial_and_total_limits: no initial condition given");
  detail::require_time(t, y);
  const auto [qir, var_ir] = detail::initial_moments(*in.init, y);
  const auto [qir_shift, var_ir_shift] = detail::initial_moments(*in.init, t + y);
  return {qir, var_ir, qir_shift + fluid_qr(in, t, y), var_ir_shift + var_qr(in, t, y)};
}

/// Evaluate f(t, y) over a grid.
template <class F>
TwoParamField surface(std::string label, const Grid& grid, F&& f) {
  TwoParamField out(std::move(label), grid);
  for (std::size_t i = 0; i < grid.t.size(); ++i)
    for (std::size_t j = 0; j < grid.y.size(); ++j) out.at(i, j) = f(grid.t[i], grid.y[j]);
  return out;
}

}  // namespace hqinf
