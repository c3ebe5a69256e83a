#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace hqinf {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  void merge(const CompensatedSum& other) {
    add(other.sum_);
    add(other.comp_);
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// First four raw power sums, merged associatively across workers.
class MomentAccumulator {
 public:
  void add(double x) {
    ++count_;
    const double x2 = x * x;
    s1_.add(x);
    s2_.add(x2);
    s3_.add(x2 * x);
    s4_.add(x2 * x2);
  }

  void merge(const MomentAccumulator& o) {
    count_ += o.count_;
    s1_.merge(o.s1_);
    s2_.merge(o.s2_);
    s3_.merge(o.s3_);
    s4_.merge(o.s4_);
  }

  std::size_t count() const { return count_; }
  double mean() const { return count_ ? s1_.value() / count_ : 0.0; }

  /// Unbiased sample variance.
  double variance() const {
    if (count_ < 2) return 0.0;
    const double n = static_cast<double>(count_);
    const double m = mean();
    const double central = s2_.value() / n - m * m;
    return std::max(0.0, central) * n / (n - 1.0);
  }

  double skewness() const {
    const double m2 = central2();
    if (count_ < 3 || m2 <= 0.0) return 0.0;
    return central3() / std::pow(m2, 1.5);
  }

  double excess_kurtosis() const {
    const double m2 = central2();
    if (count_ < 4 || m2 <= 0.0) return 0.0;
    return central4() / (m2 * m2) - 3.0;
  }

 private:
  double central2() const {
    const double m = mean();
    return std::max(0.0, s2_.value() / count_ - m * m);
  }
  double central3() const {
    const double n = static_cast<double>(count_);
    const double m = mean();
    return s3_.value() / n - 3.0 * m * s2_.value() / n + 2.0 * m * m * m;
  }
  double central4() const {
    const double n = static_cast<double>(count_);
    const double m = mean();
    return s4_.value() / n - 4.0 * m * s3_.value() / n + 6.0 * m * m * s2_.value() / n - 3.0 * m * m * m * m;
  }

  std::size_t count_ = 0;
  CompensatedSum s1_, s2_, s3_, s4_;
};

class CovarianceAccumulator {
 public:
  void add(double x, double y) {
    ++count_;
    sx_.add(x);
    sy_.add(y);
    sxx_.add(x * x);
    syy_.add(y * y);
    sxy_.add(x * y);
  }
  void merge(const CovarianceAccumulator& o) {
    count_ += o.count_;
    sx_.merge(o.sx_);
    sy_.merge(o.sy_);
    sxx_.merge(o.sxx_);
    syy_.merge(o.syy_);
    sxy_.merge(o.sxy_);
  }
  std::size_t count() const { return count_; }

  double covariance() const {
    if (count_ < 2) return 0.0;
    const double n = static_cast<double>(count_);
    return (sxy_.value() - sx_.value() * sy_.value() / n) / (n - 1.0);
  }

  /// Pearson correlation; 0 when either coordinate is degenerate.
  double correlation() const {
    if (count_ < 2) return 0.0;
    const double n = static_cast<double>(count_);
    const double vx = sxx_.value() - sx_.value() * sx_.value() / n;
    const double vy = syy_.value() - sy_.value() * sy_.value() / n;
    if (vx <= 0.0 || vy <= 0.0) return 0.0;
    return (sxy_.value() - sx_.value() * sy_.value() / n) / std::sqrt(vx * vy);
  }

 private:
  std::size_t count_ = 0;
  CompensatedSum sx_, sy_, sxx_, syy_, sxy_;
};

/// sup_x |F_N(x) - F(x)| for a sample (sorted in place).
inline double kolmogorov_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) return 0.0;
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    const double f_left = cdf(std::nextafter(sample[i], -std::numeric_limits<double>::infinity()));
    // Both sides of the jump; ties collapse because F_N is right-continuous.
    std::size_t j = i;
    while (j + 1 < sample.size() && sample[j + 1] == sample[i]) ++j;
    d = std::max({d, std::abs((j + 1) / n - f), std::abs(i / n - f_left)});
    i = j;
  }
  return d;
}

/// Asymptotic 1% critical value of the one-sample Kolmogorov-Smirnov statistic.
inline double ks_critical_1pct(std::size_t n) { return 1.62762 / std::sqrt(static_cast<double>(n)); }

}  // namespace hqinf
