#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hqinf/random.hpp"
#include "hqinf/service_models.hpp"

namespace hqinf {

/// Catalog rate functions: constant a, linear a + b t, sinusoidal a + b sin(c t + d).
/// Cumulatives are closed form; inversion is a safeguarded Newton solve.
class RateFunction {
 public:
  enum class Kind { constant, linear, sinusoidal };

  static RateFunction constant(double a) {
    detail::require(std::isfinite(a) && a > 0.0, "rate must be positive");
    return RateFunction(Kind::constant, a, 0.0, 0.0, 0.0);
  }
  static RateFunction linear(double a, double b) {
    detail::require(std::isfinite(a) && std::isfinite(b) && a >= 0.0 && b >= 0.0 && a + b > 0.0,
                    "linear rate: need a >= 0, b >= 0, not both zero");
    return RateFunction(Kind::linear, a, b, 0.0, 0.0);
  }
  static RateFunction sinusoidal(double a, double b, double c, double d) {
    detail::require(std::isfinite(a) && std::isfinite(b) && std::isfinite(c) && std::isfinite(d),
                    "sinusoidal rate: parameters must be finite");
    detail::require(a > 0.0 && a >= std::abs(b), "sinusoidal rate: need a > 0 and a >= |b|");
    detail::require(c > 0.0 || b == 0.0, "sinusoidal rate: frequency must be positive");
    return RateFunction(Kind::sinusoidal, a, b, c, d);
  }

  Kind kind() const { return kind_; }

  double rate(double t) const {
    switch (kind_) {
      case Kind::constant: return a_;
      case Kind::linear: return a_ + b_ * t;
      case Kind::sinusoidal: return a_ + b_ * std::sin(c_ * t + d_);
    }
    return 0.0;
  }

  /// a-bar(t) = int_0^t lambda(s) ds
  double cumulative(double t) const {
    if (t < 0.0) throw std::invalid_argument("cumulative rate: t must be nonnegative");
    switch (kind_) {
      case Kind::constant: return a_ * t;
      case Kind::linear: return a_ * t + 0.5 * b_ * t * t;
      case Kind::sinusoidal:
        if (b_ == 0.0) return a_ * t;
        return a_ * t + (b_ / c_) * (std::cos(d_) - std::cos(c_ * t + d_));
    }
    return 0.0;
  }

  /// Smallest t >= 0 with cumulative(t) = v.
  double inverse(double v) const {
    if (v <= 0.0) return 0.0;
    if (kind_ == Kind::constant) return v / a_;
    if (kind_ == Kind::linear && b_ > 0.0) {
      // a t + b t^2 / 2 = v, stable root
      return 2.0 * v / (a_ + std::sqrt(a_ * a_ + 2.0 * b_ * v));
    }
    double lo = 0.0, hi = std::max(1.0, v / a_);
    while (cumulative(hi) < v) {
      lo = hi;
      hi *= 2.0;
    }
    double x = std::clamp(v / a_, lo, hi);
    for (int it = 0; it < 100; ++it) {
      const double f = cumulative(x) - v;
      if (f == 0.0) return x;
      (f > 0.0 ? hi : lo) = x;
      const double slope = rate(x);
      double next = slope > 0.0 ? x - f / slope : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - x) <= 1e-15 * std::max(1.0, x)) return next;
      x = next;
    }
    return x;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind_) {
      case Kind::constant: os << "constant(" << a_ << ")"; break;
      case Kind::linear: os << "linear(" << a_ << " + " << b_ << " t)"; break;
      case Kind::sinusoidal: os << "sinusoidal(" << a_ << " + " << b_ << " sin(" << c_ << " t + " << d_ << "))"; break;
    }
    return os.str();
  }

 private:
  RateFunction(Kind k, double a, double b, double c, double d) : kind_(k), a_(a), b_(b), c_(c), d_(d) {}
  Kind kind_;
  double a_, b_, c_, d_;
};

struct AsymptoticParams {
  RateFunction rate;
  double ca2;
};

class ArrivalModel {
 public:
  enum class Kind { poisson, nhpp, renewal, time_changed_renewal };

  static ArrivalModel poisson(double rate) {
    detail::require(std::isfinite(rate) && rate > 0.0, "rate must be positive");
    return ArrivalModel(Kind::poisson, RateFunction::constant(rate), std::nullopt, 1.0);
  }
  static ArrivalModel nhpp(RateFunction rate) { return ArrivalModel(Kind::nhpp, rate, std::nullopt, 1.0); }
  static ArrivalModel renewal(ServiceModel interarrival) {
    const Moments m = interarrival.moments();
    detail::require(m.mean_finite() && m.mean > 0.0, "renewal: interarrival mean must be finite and positive");
    detail::require(m.second_moment_finite(), "renewal: interarrival variance must be finite");
    return ArrivalModel(Kind::renewal, RateFunction::constant(1.0 / m.mean), std::move(interarrival), m.scv);
  }
  static ArrivalModel time_changed_renewal(ServiceModel interarrival, RateFunction rate) {
    const Moments m = interarrival.moments();
    detail::require(m.mean_finite() && m.mean > 0.0, "time-changed renewal: interarrival mean must be finite and positive");
    detail::require(m.second_moment_finite(), "time-changed renewal: interarrival variance must be finite");
    return ArrivalModel(Kind::time_changed_renewal, rate, std::move(interarrival), m.scv);
  }

  Kind kind() const { return kind_; }
  const RateFunction& rate_function() const { return rate_; }
  double rate(double t) const { return rate_.rate(t); }
  double cumulative_rate(double t) const { return rate_.cumulative(t); }
  double ca2() const { return ca2_; }
  AsymptoticParams asymptotic_params() const { return {rate_, ca2_}; }
  bool is_poisson_family() const { return kind_ == Kind::poisson || kind_ == Kind::nhpp; }
  bool is_standard() const { return rate_.kind() == RateFunction::Kind::constant; }

  /// Sorted, strictly increasing epochs in (0, horizon] for the n-th system.
  std::vector<double> generate_arrivals(long n, double horizon, RandomStream& rng) const {
    detail::require(n >= 1, "generate_arrivals: n must be >= 1");
    detail::require(std::isfinite(horizon) && horizon > 0.0, "generate_arrivals: horizon must be positive");
    const double nd = static_cast<double>(n);
    const double top = cumulative_rate(horizon);
    std::vector<double> epochs;
    epochs.reserve(static_cast<std::size_t>(nd * top * 1.1) + 16);

    // Unit-rate (poisson kinds) or normalized renewal stream S_k on the
    // a-bar scale; epoch k is a-bar^{-1}(S_k / n).
    double mean_gap = 1.0;
    if (interarrival_) mean_gap = interarrival_->moments().mean;
    double s = 0.0;
    for (;;) {
      if (interarrival_)
        s += interarrival_->sample(rng);
      else
        s += rng.exponential(1.0);
      if (kind_ == Kind::renewal) {
        // Unscaled gaps divided by n: epochs k*d/n are exact for deterministic gaps.
        const double tau = s / nd;
        if (tau > horizon) break;
        push_epoch(epochs, tau);
        continue;
      }
      const double level = (interarrival_ ? s / mean_gap : s) / nd;
      if (level > top) break;
      push_epoch(epochs, std::min(rate_.inverse(level), horizon));
    }
    return epochs;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind_) {
      case Kind::poisson: os << "poisson(" << rate_.rate(0.0) << ")"; break;
      case Kind::nhpp: os << "nhpp(" << rate_.describe() << ")"; break;
      case Kind::renewal: os << "renewal(" << interarrival_->describe() << ")"; break;
      case Kind::time_changed_renewal:
        os << "time-changed-renewal(" << interarrival_->describe() << ", " << rate_.describe() << ")";
        break;
    }
    return os.str();
  }

 private:
  ArrivalModel(Kind k, RateFunction r, std::optional<ServiceModel> inter, double ca2)
      : kind_(k), rate_(r), interarrival_(std::move(inter)), ca2_(ca2) {}

  static void push_epoch(std::vector<double>& epochs, double tau) {
    // Ties get nudged forward by one ulp so that epochs stay strictly increasing.
    if (!epochs.empty() && tau <= epochs.back())
      tau = std::nextafter(epochs.back(), std::numeric_limits<double>::infinity());
    epochs.push_back(tau);
  }

  Kind kind_;
  RateFunction rate_;
  std::optional<ServiceModel> interarrival_;
  double ca2_;
};

inline double cumulative_rate(const ArrivalModel& model, double t) { return model.cumulative_rate(t); }
inline AsymptoticParams asymptotic_params(const ArrivalModel& model) { return model.asymptotic_params(); }
inline std::vector<double> generate_arrivals(const ArrivalModel& model, long n, double horizon, RandomStream& rng) {
  return model.generate_arrivals(n, horizon, rng);
}

}  // namespace hqinf
