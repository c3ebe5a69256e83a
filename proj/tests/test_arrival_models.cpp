#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hqinf/arrival_models.hpp"
#include "hqinf/statistics.hpp"
#include "oracles.hpp"

using namespace hqinf;

namespace {

std::vector<ArrivalModel> catalog() {
  return {
      ArrivalModel::poisson(1.0),
      ArrivalModel::poisson(2.5),
      ArrivalModel::nhpp(RateFunction::sinusoidal(1.0, 1.0, 1.0, 0.0)),
      ArrivalModel::nhpp(RateFunction::linear(0.0, 2.0)),
      ArrivalModel::renewal(ServiceModel::deterministic(1.0)),
      ArrivalModel::renewal(ServiceModel::hyperexponential({0.5, 0.5}, {2.0, 2.0 / 3.0})),
      ArrivalModel::renewal(ServiceModel::uniform(0.0, 2.0)),
      ArrivalModel::time_changed_renewal(ServiceModel::uniform(0.0, 2.0), RateFunction::linear(1.0, 1.0)),
  };
}

}  // namespace

TEST(CumulativeRate, Examples) {
  EXPECT_DOUBLE_EQ(cumulative_rate(ArrivalModel::poisson(1.0), 2.0), 2.0);
  const auto s = ArrivalModel::nhpp(RateFunction::sinusoidal(1.0, 1.0, 1.0, 0.0));
  const double ref = oracle::gauss([](double u) { return 1.0 + std::sin(u); }, 0.0, std::numbers::pi);
  EXPECT_NEAR(cumulative_rate(s, std::numbers::pi), ref, 1e-10);
  EXPECT_NEAR(cumulative_rate(s, std::numbers::pi), 5.141593, 1e-6);
  for (const auto& m : catalog()) EXPECT_EQ(cumulative_rate(m, 0.0), 0.0);
}

TEST(CumulativeRate, NegativeTimeIsAnError) {
  EXPECT_THROW(cumulative_rate(ArrivalModel::poisson(1.0), -0.1), std::invalid_argument);
}

// a-bar(0) = 0, continuous, nondecreasing, and equal to the integral of the rate.
TEST(CumulativeRate, IsIntegralOfRate) {
  for (const auto& m : catalog()) {
    SCOPED_TRACE(m.describe());
    double prev = 0.0;
    for (int i = 1; i <= 200; ++i) {
      const double t = 0.025 * i;
      const double a = m.cumulative_rate(t);
      ASSERT_GE(a, prev);
      ASSERT_LT(a - prev, 0.025 * 20.0);
      prev = a;
    }
    EXPECT_NEAR(m.cumulative_rate(3.7), oracle::gauss([&](double u) { return m.rate(u); }, 0.0, 3.7), 1e-10);
    // inverse undoes cumulative
    for (double v : {0.1, 1.0, 4.5}) EXPECT_NEAR(m.cumulative_rate(m.rate_function().inverse(v)), v, 1e-10);
  }
}

TEST(RateFunction, RejectsNonpositiveRate) {
  try {
    RateFunction::constant(0.0);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "rate must be positive");
  }
  EXPECT_THROW(ArrivalModel::poisson(-1.0), std::invalid_argument);
  EXPECT_THROW(RateFunction::sinusoidal(1.0, 2.0, 1.0, 0.0), std::invalid_argument);
}

TEST(AsymptoticParams, Examples) {
  auto p = asymptotic_params(ArrivalModel::poisson(3.0));
  EXPECT_EQ(p.rate.rate(0.7), 3.0);
  EXPECT_EQ(p.ca2, 1.0);
  auto d = asymptotic_params(ArrivalModel::renewal(ServiceModel::deterministic(1.0)));
  EXPECT_EQ(d.rate.rate(0.0), 1.0);
  EXPECT_NEAR(d.ca2, 0.0, 1e-15);
  const auto h = ServiceModel::hyperexponential({0.5, 0.5}, {2.0, 2.0 / 3.0});
  auto r = asymptotic_params(ArrivalModel::renewal(h));
  EXPECT_NEAR(r.rate.rate(0.0), 1.0 / h.moments().mean, 1e-14);
  EXPECT_NEAR(r.ca2, h.moments().scv, 1e-14);
  EXPECT_NEAR(r.ca2, 1.5, 1e-12);
  EXPECT_EQ(asymptotic_params(ArrivalModel::nhpp(RateFunction::linear(1.0, 1.0))).ca2, 1.0);
}

TEST(GenerateArrivals, DeterministicSpacing) {
  RandomStream rng(1);
  auto e = generate_arrivals(ArrivalModel::renewal(ServiceModel::deterministic(1.0)), 10, 1.0, rng);
  ASSERT_EQ(e.size(), 10u);
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(e[k], (k + 1) / 10.0, 1e-15);
  EXPECT_EQ(e.back(), 1.0);
}

TEST(GenerateArrivals, PoissonCountWithinThreeSigma) {
  int ok = 0;
  for (int seed = 0; seed < 300; ++seed) {
    RandomStream rng(seed);
    const double c = static_cast<double>(generate_arrivals(ArrivalModel::poisson(1.0), 1000, 1.0, rng).size());
    ok += std::abs(c - 1000.0) <= 3.0 * std::sqrt(1000.0);
  }
  EXPECT_GE(ok, 297);
}

TEST(GenerateArrivals, NhppCountWithinThreeSigma) {
  int ok = 0;
  MomentAccumulator acc;
  for (int seed = 0; seed < 300; ++seed) {
    RandomStream rng(seed);
    const double c = static_cast<double>(generate_arrivals(ArrivalModel::nhpp(RateFunction::linear(0.0, 2.0)), 100, 1.0, rng).size());
    acc.add(c);
    ok += std::abs(c - 100.0) <= 30.0;
  }
  EXPECT_GE(ok, 297);
  EXPECT_NEAR(acc.mean(), 100.0, 3.0);
}

TEST(GenerateArrivals, EpochsStrictlyIncreasingWithinHorizon) {
  for (const auto& m : catalog()) {
    SCOPED_TRACE(m.describe());
    RandomStream rng(8);
    const auto e = m.generate_arrivals(500, 2.0, rng);
    ASSERT_FALSE(e.empty());
    EXPECT_GT(e.front(), 0.0);
    EXPECT_LE(e.back(), 2.0);
    for (std::size_t i = 1; i < e.size(); ++i) ASSERT_GT(e[i], e[i - 1]);
  }
}

TEST(GenerateArrivals, ReproducibleFromStream) {
  for (const auto& m : catalog()) {
    RandomStream a(77), b(77);
    EXPECT_EQ(m.generate_arrivals(50, 3.0, a), m.generate_arrivals(50, 3.0, b));
  }
}

// |A_n(T)/n - a-bar(T)| < 0.05 for n = 10^4 in at least 95% of runs.
TEST(GenerateArrivals, LawOfLargeNumbers) {
  for (const auto& m : catalog()) {
    SCOPED_TRACE(m.describe());
    int ok = 0;
    for (int seed = 0; seed < 40; ++seed) {
      RandomStream rng(500 + seed);
      const double c = static_cast<double>(m.generate_arrivals(10000, 2.0, rng).size());
      ok += std::abs(c / 10000.0 - m.cumulative_rate(2.0)) < 0.05;
    }
    EXPECT_GE(ok, 38);
  }
}

// sqrt(n)(A_n(t)/n - a-bar(t)) has variance close to lambda c_a^2 t.
TEST(GenerateArrivals, CentralLimitVariance) {
  const std::vector<ArrivalModel> models = {
      ArrivalModel::poisson(1.0),
      ArrivalModel::poisson(2.0),
      ArrivalModel::renewal(ServiceModel::hyperexponential({0.5, 0.5}, {2.0, 2.0 / 3.0})),
      ArrivalModel::renewal(ServiceModel::uniform(0.0, 2.0)),
  };
  const long n = 400;
  for (const auto& m : models) {
    SCOPED_TRACE(m.describe());
    MomentAccumulator acc;
    for (int rep = 0; rep < 2000; ++rep) {
      RandomStream rng(substream_id(3, "arrival_clt", n, rep, Component::arrivals));
      const double c = static_cast<double>(m.generate_arrivals(n, 1.0, rng).size());
      acc.add(std::sqrt(double(n)) * (c / n - m.cumulative_rate(1.0)));
    }
    const double target = m.rate(0.0) * m.ca2() * 1.0;
    EXPECT_NEAR(acc.variance(), target, 0.15 * target);
  }
}
