#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hqinf/quadrature.hpp"
#include "hqinf/random.hpp"

namespace hqinf {

struct Atom {
  double point;
  double mass;
  bool operator==(const Atom&) const = default;
};

/// mean = E[eta]; scv = Var(eta)/E[eta]^2. An infinite mean is a value, and
/// then scv is undefined (NaN). A finite mean with infinite second moment
/// gives scv = +inf.
struct Moments {
  double mean;
  double scv;
  bool mean_finite() const { return std::isfinite(mean); }
  bool second_moment_finite() const { return std::isfinite(mean) && std::isfinite(scv); }
  double second_moment() const { return (scv + 1.0) * mean * mean; }
};

class ServiceModel;

namespace detail {

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

/// Service-time law: exponential, deterministic, uniform, lognormal,
/// hyperexponential, finite atom list, Pareto, or a two-part mixture of a
/// purely continuous law and a purely atomic one. Immutable once built.
class ServiceModel {
 public:
  enum class Kind { exponential, deterministic, uniform, lognormal, hyperexponential, finite_atoms, pareto, mixture };

  static ServiceModel exponential(double rate) {
    detail::require(std::isfinite(rate) && rate > 0.0, "exponential: rate must be positive");
    return ServiceModel(Exponential{rate});
  }
  static ServiceModel deterministic(double point) {
    detail::require(std::isfinite(point) && point >= 0.0, "deterministic: point must be nonnegative");
    return ServiceModel(Deterministic{point});
  }
  static ServiceModel uniform(double a, double b) {
    detail::require(std::isfinite(a) && std::isfinite(b) && a >= 0.0 && b > a,
                    "uniform: need 0 <= a < b");
    return ServiceModel(Uniform{a, b});
  }
  static ServiceModel lognormal(double logmean, double logsd) {
    detail::require(std::isfinite(logmean) && std::isfinite(logsd) && logsd > 0.0,
                    "lognormal: logsd must be positive");
    return ServiceModel(Lognormal{logmean, logsd});
  }
  static ServiceModel hyperexponential(std::vector<double> weights, std::vector<double> rates) {
    detail::require(!weights.empty() && weights.size() == rates.size(),
                    "hyperexponential: weights and rates must be nonempty and of equal length");
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      detail::require(weights[i] >= 0.0, "hyperexponential: weights must be nonnegative");
      detail::require(std::isfinite(rates[i]) && rates[i] > 0.0, "hyperexponential: rate must be positive");
      total += weights[i];
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "hyperexponential: weights must sum to 1");
    return ServiceModel(Hyperexponential{std::move(weights), std::move(rates)});
  }
  static ServiceModel finite_atoms(std::vector<Atom> atoms) {
    detail::require(!atoms.empty(), "finite-atoms: atom list must be nonempty");
    double total = 0.0;
    for (const Atom& a : atoms) {
      detail::require(std::isfinite(a.point) && a.point >= 0.0, "finite-atoms: points must be nonnegative");
      detail::require(a.mass > 0.0 && a.mass <= 1.0, "finite-atoms: masses must lie in (0, 1]");
      total += a.mass;
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "finite-atoms: masses must sum to 1");
    return ServiceModel(FiniteAtoms{std::move(atoms)});
  }
  static ServiceModel pareto(double shape, double scale) {
    detail::require(std::isfinite(shape) && shape > 0.0, "pareto: shape must be positive");
    detail::require(std::isfinite(scale) && scale > 0.0, "pareto: scale must be positive");
    return ServiceModel(Pareto{shape, scale});
  }
  /// weight is p_c, the mass of the continuous part.
  static ServiceModel mixture(double weight, ServiceModel continuous_part, ServiceModel atomic_part) {
    detail::require(weight >= 0.0 && weight <= 1.0, "mixture: weight must lie in [0, 1]");
    detail::require(!continuous_part.has_atoms(), "mixture: continuous part must have no atoms");
    detail::require(continuous_part.is_continuous_kind(), "mixture: continuous part must be purely continuous");
    detail::require(atomic_part.is_purely_atomic(), "mixture: atomic part must be purely atomic");
    return ServiceModel(Mixture{weight, std::make_shared<const ServiceModel>(std::move(continuous_part)),
                                std::make_shared<const ServiceModel>(std::move(atomic_part))});
  }

  Kind kind() const { return static_cast<Kind>(law_.index()); }

  double cdf(double x) const {
    if (std::isnan(x)) throw std::invalid_argument("cdf: x must not be NaN");
    if (x < 0.0) return 0.0;
    if (x == std::numeric_limits<double>::infinity()) return 1.0;
    return std::visit([x](const auto& law) { return cdf_of(law, x); }, law_);
  }

  double ccdf(double x) const { return 1.0 - cdf(x); }

  /// Lambda(x) = int_0^x F^c(s) ds = E[min(eta, x)] in closed form.
  double integrated_ccdf(double x) const {
    if (x <= 0.0) return 0.0;
    return std::visit([x](const auto& law) { return integrated_ccdf_of(law, x); }, law_);
  }

  Moments moments() const {
    return std::visit([](const auto& law) { return moments_of(law); }, law_);
  }

  double sample(RandomStream& rng) const {
    return std::visit([&rng](const auto& law) { return sample_of(law, rng); }, law_);
  }

  /// Raw atoms (point, probability mass under F), merged by point.
  std::vector<Atom> atoms() const {
    std::vector<Atom> raw = std::visit([](const auto& law) { return atoms_of(law); }, law_);
    std::sort(raw.begin(), raw.end(), [](const Atom& a, const Atom& b) { return a.point < b.point; });
    std::vector<Atom> merged;
    for (const Atom& a : raw) {
      if (!merged.empty() && merged.back().point == a.point)
        merged.back().mass += a.mass;
      else if (a.mass > 0.0)
        merged.push_back(a);
    }
    return merged;
  }

  bool has_atoms() const { return !atoms().empty(); }

  struct MixtureParts {
    double weight;
    const ServiceModel& continuous;
    const ServiceModel& atomic;
  };
  /// Weight and parts of a mixture; empty for other kinds.
  std::optional<MixtureParts> mixture_parts() const {
    if (kind() != Kind::mixture) return std::nullopt;
    const auto& m = std::get<Mixture>(law_);
    return MixtureParts{m.weight, *m.continuous, *m.atomic};
  }

  /// Points where F jumps or its density does; quadrature breakpoints.
  std::vector<double> kinks() const {
    std::vector<double> out;
    switch (kind()) {
      case Kind::uniform: {
        const auto& u = std::get<Uniform>(law_);
        out = {u.a, u.b};
        break;
      }
      case Kind::pareto:
        out = {std::get<Pareto>(law_).scale};
        break;
      case Kind::mixture: {
        const auto& m = std::get<Mixture>(law_);
        out = m.continuous->kinks();
        for (double k : m.atomic->kinks()) out.push_back(k);
        break;
      }
      default:
        for (const Atom& a : atoms()) out.push_back(a.point);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  bool is_purely_atomic() const {
    switch (kind()) {
      case Kind::deterministic:
      case Kind::finite_atoms:
        return true;
      case Kind::mixture:
        return std::get<Mixture>(law_).weight == 0.0;
      default:
        return false;
    }
  }

  /// Smallest x with F^c(x) < eps; used to truncate tail integrals.
  double tail_bound(double eps) const {
    const auto pts = atoms();
    double hi = 1.0;
    for (const Atom& a : pts) hi = std::max(hi, a.point);
    if (ccdf(hi) < eps) {
      double lo = 0.0;
      if (ccdf(lo) < eps) return 0.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (ccdf(mid) < eps ? hi : lo) = mid;
      }
      return hi;
    }
    double lo = hi;
    while (ccdf(hi) >= eps) {
      lo = hi;
      hi *= 2.0;
      if (!std::isfinite(hi)) throw std::domain_error("tail_bound: tail does not decay");
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (ccdf(mid) < eps ? hi : lo) = mid;
    }
    return hi;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    std::visit([&os](const auto& law) { describe_law(os, law); }, law_);
    return os.str();
  }

 private:
  struct Exponential { double rate; };
  struct Deterministic { double point; };
  struct Uniform { double a, b; };
  struct Lognormal { double logmean, logsd; };
  struct Hyperexponential { std::vector<double> weights, rates; };
  struct FiniteAtoms { std::vector<Atom> atoms; };
  struct Pareto { double shape, scale; };
  struct Mixture {
    double weight;
    std::shared_ptr<const ServiceModel> continuous, atomic;
  };
  using Law = std::variant<Exponential, Deterministic, Uniform, Lognormal, Hyperexponential, FiniteAtoms, Pareto, Mixture>;

  explicit ServiceModel(Law law) : law_(std::move(law)) {}

  bool is_continuous_kind() const {
    switch (kind()) {
      case Kind::deterministic:
      case Kind::finite_atoms:
        return false;
      case Kind::mixture:
        return std::get<Mixture>(law_).weight == 1.0;
      default:
        return true;
    }
  }

  // cdf
  static double cdf_of(const Exponential& l, double x) { return -std::expm1(-l.rate * x); }
  static double cdf_of(const Deterministic& l, double x) { return x >= l.point ? 1.0 : 0.0; }
  static double cdf_of(const Uniform& l, double x) {
    if (x <= l.a) return 0.0;
    if (x >= l.b) return 1.0;
    return (x - l.a) / (l.b - l.a);
  }
  static double cdf_of(const Lognormal& l, double x) {
    if (x <= 0.0) return 0.0;
    return detail::std_normal_cdf((std::log(x) - l.logmean) / l.logsd);
  }
  static double cdf_of(const Hyperexponential& l, double x) {
    double c = 0.0;
    for (std::size_t i = 0; i < l.weights.size(); ++i) c += l.weights[i] * std::exp(-l.rates[i] * x);
    return 1.0 - c;
  }
  static double cdf_of(const FiniteAtoms& l, double x) {
    double c = 0.0;
    for (const Atom& a : l.atoms)
      if (a.point <= x) c += a.mass;
    return std::min(c, 1.0);
  }
  static double cdf_of(const Pareto& l, double x) {
    if (x <= l.scale) return 0.0;
    return 1.0 - std::pow(l.scale / x, l.shape);
  }
  static double cdf_of(const Mixture& l, double x) {
    return l.weight * l.continuous->cdf(x) + (1.0 - l.weight) * l.atomic->cdf(x);
  }

  // integrated complementary cdf
  static double integrated_ccdf_of(const Exponential& l, double x) { return -std::expm1(-l.rate * x) / l.rate; }
  static double integrated_ccdf_of(const Deterministic& l, double x) { return std::min(x, l.point); }
  static double integrated_ccdf_of(const Uniform& l, double x) {
    if (x <= l.a) return x;
    if (x >= l.b) return 0.5 * (l.a + l.b);
    const double w = l.b - l.a;
    return l.a + (w * w - (l.b - x) * (l.b - x)) / (2.0 * w);
  }
  static double integrated_ccdf_of(const Lognormal& l, double x) {
    if (x == std::numeric_limits<double>::infinity()) return std::exp(l.logmean + 0.5 * l.logsd * l.logsd);
    const double z = (std::log(x) - l.logmean) / l.logsd;
    return std::exp(l.logmean + 0.5 * l.logsd * l.logsd) * detail::std_normal_cdf(z - l.logsd) +
           x * detail::std_normal_cdf(-z);
  }
  static double integrated_ccdf_of(const Hyperexponential& l, double x) {
    double v = 0.0;
    for (std::size_t i = 0; i < l.weights.size(); ++i) v += l.weights[i] * -std::expm1(-l.rates[i] * x) / l.rates[i];
    return v;
  }
  static double integrated_ccdf_of(const FiniteAtoms& l, double x) {
    double v = 0.0;
    for (const Atom& a : l.atoms) v += a.mass * std::min(x, a.point);
    return v;
  }
  static double integrated_ccdf_of(const Pareto& l, double x) {
    if (x <= l.scale) return x;
    if (x == std::numeric_limits<double>::infinity())
      return l.shape > 1.0 ? l.shape * l.scale / (l.shape - 1.0) : x;
    if (l.shape == 1.0) return l.scale + l.scale * std::log(x / l.scale);
    return l.scale + std::pow(l.scale, l.shape) * (std::pow(x, 1.0 - l.shape) - std::pow(l.scale, 1.0 - l.shape)) /
                         (1.0 - l.shape);
  }
  static double integrated_ccdf_of(const Mixture& l, double x) {
    return l.weight * l.continuous->integrated_ccdf(x) + (1.0 - l.weight) * l.atomic->integrated_ccdf(x);
  }

  // moments, returned as (mean, second moment) internally
  static Moments from_raw(double m1, double m2) {
    if (!std::isfinite(m1)) return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::quiet_NaN()};
    if (!std::isfinite(m2)) return {m1, std::numeric_limits<double>::infinity()};
    if (m1 == 0.0) return {0.0, std::numeric_limits<double>::quiet_NaN()};
    return {m1, std::max(0.0, m2 / (m1 * m1) - 1.0)};
  }
  static Moments moments_of(const Exponential& l) { return {1.0 / l.rate, 1.0}; }
  static Moments moments_of(const Deterministic& l) { return from_raw(l.point, l.point * l.point); }
  static Moments moments_of(const Uniform& l) {
    const double m = 0.5 * (l.a + l.b);
    const double var = (l.b - l.a) * (l.b - l.a) / 12.0;
    return {m, var / (m * m)};
  }
  static Moments moments_of(const Lognormal& l) {
    return {std::exp(l.logmean + 0.5 * l.logsd * l.logsd), std::expm1(l.logsd * l.logsd)};
  }
  static Moments moments_of(const Hyperexponential& l) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < l.weights.size(); ++i) {
      m1 += l.weights[i] / l.rates[i];
      m2 += 2.0 * l.weights[i] / (l.rates[i] * l.rates[i]);
    }
    return from_raw(m1, m2);
  }
  static Moments moments_of(const FiniteAtoms& l) {
    double m1 = 0.0, m2 = 0.0;
    for (const Atom& a : l.atoms) {
      m1 += a.mass * a.point;
      m2 += a.mass * a.point * a.point;
    }
    return from_raw(m1, m2);
  }
  static Moments moments_of(const Pareto& l) {
    const double inf = std::numeric_limits<double>::infinity();
    const double m1 = l.shape > 1.0 ? l.shape * l.scale / (l.shape - 1.0) : inf;
    const double m2 = l.shape > 2.0 ? l.shape * l.scale * l.scale / (l.shape - 2.0) : inf;
    return from_raw(m1, m2);
  }
  static Moments moments_of(const Mixture& l) {
    const Moments c = l.continuous->moments();
    const Moments a = l.atomic->moments();
    const double w = l.weight;
    const double m1 = (w > 0.0 ? w * c.mean : 0.0) + (w < 1.0 ? (1.0 - w) * a.mean : 0.0);
    const double m2 = (w > 0.0 ? w * c.second_moment() : 0.0) + (w < 1.0 ? (1.0 - w) * a.second_moment() : 0.0);
    if (w > 0.0 && !c.mean_finite()) return from_raw(c.mean, c.mean);
    return from_raw(m1, m2);
  }

  // sampling
  static double sample_of(const Exponential& l, RandomStream& rng) { return rng.exponential(l.rate); }
  static double sample_of(const Deterministic& l, RandomStream&) { return l.point; }
  static double sample_of(const Uniform& l, RandomStream& rng) { return l.a + (l.b - l.a) * rng.uniform(); }
  static double sample_of(const Lognormal& l, RandomStream& rng) { return std::exp(l.logmean + l.logsd * rng.normal()); }
  static double sample_of(const Hyperexponential& l, RandomStream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t i = 0;
    for (; i + 1 < l.weights.size(); ++i) {
      acc += l.weights[i];
      if (u < acc) break;
    }
    return rng.exponential(l.rates[i]);
  }
  static double sample_of(const FiniteAtoms& l, RandomStream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < l.atoms.size(); ++i) {
      acc += l.atoms[i].mass;
      if (u < acc) return l.atoms[i].point;
    }
    return l.atoms.back().point;
  }
  static double sample_of(const Pareto& l, RandomStream& rng) {
    return l.scale * std::pow(rng.uniform(), -1.0 / l.shape);
  }
  static double sample_of(const Mixture& l, RandomStream& rng) {
    const double u = rng.uniform();
    return u < l.weight ? l.continuous->sample(rng) : l.atomic->sample(rng);
  }

  // atoms
  template <class L>
  static std::vector<Atom> atoms_of(const L&) { return {}; }
  static std::vector<Atom> atoms_of(const Deterministic& l) { return {{l.point, 1.0}}; }
  static std::vector<Atom> atoms_of(const FiniteAtoms& l) { return l.atoms; }
  static std::vector<Atom> atoms_of(const Mixture& l) {
    std::vector<Atom> out;
    if (l.weight < 1.0)
      for (Atom a : l.atomic->atoms()) out.push_back({a.point, a.mass * (1.0 - l.weight)});
    return out;
  }

  // description
  static void describe_law(std::ostream& os, const Exponential& l) { os << "exponential(rate=" << l.rate << ")"; }
  static void describe_law(std::ostream& os, const Deterministic& l) { os << "deterministic(" << l.point << ")"; }
  static void describe_law(std::ostream& os, const Uniform& l) { os << "uniform(" << l.a << ", " << l.b << ")"; }
  static void describe_law(std::ostream& os, const Lognormal& l) {
    os << "lognormal(logmean=" << l.logmean << ", logsd=" << l.logsd << ")";
  }
  static void describe_law(std::ostream& os, const Hyperexponential& l) {
    os << "hyperexponential(";
    for (std::size_t i = 0; i < l.weights.size(); ++i) os << (i ? ", " : "") << l.weights[i] << "@" << l.rates[i];
    os << ")";
  }
  static void describe_law(std::ostream& os, const FiniteAtoms& l) {
    os << "atoms{";
    for (std::size_t i = 0; i < l.atoms.size(); ++i) os << (i ? ", " : "") << l.atoms[i].point << ":" << l.atoms[i].mass;
    os << "}";
  }
  static void describe_law(std::ostream& os, const Pareto& l) {
    os << "pareto(shape=" << l.shape << ", scale=" << l.scale << ")";
  }
  static void describe_law(std::ostream& os, const Mixture& l) {
    os << "mixture(" << l.weight << ", " << l.continuous->describe() << ", " << l.atomic->describe() << ")";
  }

  Law law_;
};

inline double cdf(const ServiceModel& model, double x) { return model.cdf(x); }
inline Moments moments(const ServiceModel& model) { return model.moments(); }
inline double sample(const ServiceModel& model, RandomStream& rng) { return model.sample(rng); }

/// F = p_c F_c + p_d F_d with atoms ordered by decreasing mass, ties by
/// increasing point. Atom masses here are the conditional p_{d,i}.
struct MixtureDecomposition {
  double p_c = 1.0;
  double p_d = 0.0;
  std::optional<ServiceModel> continuous;
  std::vector<Atom> atoms;

  double continuous_cdf(double x) const { return continuous ? continuous->cdf(x) : 0.0; }
  double continuous_ccdf(double x) const { return continuous ? continuous->ccdf(x) : 1.0; }

  double discrete_cdf(double x) const {
    if (x < 0.0) return 0.0;
    double c = 0.0;
    for (const Atom& a : atoms)
      if (a.point <= x) c += a.mass;
    return std::min(c, 1.0);
  }

  /// p_c F_c(x) + p_d F_d(x)
  double reconstruct(double x) const {
    return (p_c > 0.0 ? p_c * continuous_cdf(x) : 0.0) + (p_d > 0.0 ? p_d * discrete_cdf(x) : 0.0);
  }

  std::vector<double> atom_points() const {
    std::vector<double> pts;
    for (const Atom& a : atoms) pts.push_back(a.point);
    return pts;
  }
};

inline void order_atoms_by_mass(std::vector<Atom>& atoms) {
  std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) {
    if (a.mass != b.mass) return a.mass > b.mass;
    return a.point < b.point;
  });
}

inline MixtureDecomposition decompose(const ServiceModel& model) {
  using Kind = ServiceModel::Kind;
  MixtureDecomposition d;
  switch (model.kind()) {
    case Kind::deterministic:
    case Kind::finite_atoms:
      d.p_c = 0.0;
      d.p_d = 1.0;
      d.atoms = model.atoms();
      break;
    case Kind::mixture: {
      const auto m = *model.mixture_parts();
      d.p_c = m.weight;
      d.p_d = 1.0 - m.weight;
      if (d.p_c > 0.0) d.continuous = m.continuous;
      if (d.p_d > 0.0) d.atoms = m.atomic.atoms();
      break;
    }
    default:
      d.p_c = 1.0;
      d.p_d = 0.0;
      d.continuous = model;
      break;
  }
  double total = 0.0;
  for (const Atom& a : d.atoms) total += a.mass;
  if (total > 0.0)
    for (Atom& a : d.atoms) a.mass /= total;
  order_atoms_by_mass(d.atoms);
  return d;
}

/// F_e(x) = mu * int_0^x F^c(s) ds by adaptive quadrature.
inline double stationary_excess_cdf(const ServiceModel& model, double x) {
  const Moments m = model.moments();
  if (!m.mean_finite()) throw std::domain_error("stationary-excess undefined: service mean is infinite");
  if (x <= 0.0) return 0.0;
  if (m.mean == 0.0) return 1.0;
  std::vector<double> breaks;
  for (const Atom& a : model.atoms()) breaks.push_back(a.point);
  const double integral = integrate([&model](double s) { return model.ccdf(s); }, 0.0, x, breaks);
  return std::min(1.0, integral / m.mean);
}

}  // namespace hqinf
