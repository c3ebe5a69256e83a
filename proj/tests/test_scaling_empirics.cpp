#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "hqinf/analytic_limits.hpp"
#include "hqinf/scaling_empirics.hpp"
#include "oracles.hpp"

using namespace hqinf;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SimulationTrace sim(const ArrivalModel& a, const ServiceModel& s, long n, std::uint64_t seed, double horizon = 2.0) {
  RandomStream rng(seed);
  return simulate(a, s, std::nullopt, n, horizon, rng);
}

TwoParamField fluid(const ArrivalModel& a, const ServiceModel& s, const Grid& g) {
  const auto in = LimitInputs::from(a, s);
  return surface("qbar_r", g, [&](double t, double y) { return fluid_qr(in, t, y); });
}

}  // namespace

TEST(Scaling, Examples) {
  const Grid g({0.5, 1.0}, {0.0, 1.0});
  TwoParamField f("x", g, 3.0 * 50);
  auto l = lln_scale(f, 50);
  EXPECT_EQ(l.scaling, Scaling::lln);
  for (double v : l.field.values) EXPECT_DOUBLE_EQ(v, 3.0);

  TwoParamField c("c", g, 0.7);
  TwoParamField nc("x", g, 0.7 * 50);
  auto z = clt_scale(nc, 50, c);
  for (double v : z.field.values) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_TRUE(z.centering.has_value());
}

TEST(Scaling, GridMismatchIsAnError) {
  TwoParamField f("x", Grid({1.0}, {0.0}));
  TwoParamField c("c", Grid({1.0}, {0.5}));
  EXPECT_THROW(clt_scale(f, 4, c), std::invalid_argument);
}

// Var of Qhat^r(1,0) for M/M/inf at n=400 matches 1 - e^{-1}.
TEST(Scaling, CltVarianceMMInfinity) {
  const auto a = ArrivalModel::poisson(1.0);
  const auto s = ServiceModel::exponential(1.0);
  const Grid g({1.0}, {0.0});
  const auto centering = fluid(a, s, g);
  MomentAccumulator acc;
  for (int rep = 0; rep < 2000; ++rep) {
    const auto tr = sim(a, s, 400, substream_id(1, "clt", 400, rep, Component::arrivals), 1.0);
    acc.add(clt_scale(eval_queue_fields(tr, g).qr, 400, centering).field.values[0]);
  }
  EXPECT_NEAR(acc.variance(), oracle::mm_qr(1, 1, 1, 0), 0.10 * 0.632121);
}

TEST(SequentialEmpirical, Examples) {
  const auto e = ServiceModel::exponential(1.0);
  const auto k = sequential_empirical({0.7}, 1, Grid({1.0}, {0.7, 2.0}), e);
  EXPECT_EQ(k.kbar.at(0, 0), 1.0);
  EXPECT_EQ(k.kbar.at(0, 1), 1.0);

  RandomStream rng(2);
  std::vector<double> svc(300);
  for (double& v : svc) v = e.sample(rng);
  const Grid g({0.3, 0.5, 1.0}, {0.0, 0.5, 1.0, kInf});
  const auto f = sequential_empirical(svc, 300, g, e);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(f.khat.at(i, 3), 0.0);
    EXPECT_DOUBLE_EQ(f.kbar.at(i, 3), std::floor(300 * g.t[i]) / 300.0);
    for (std::size_t j = 1; j < 4; ++j) EXPECT_GE(f.kbar.at(i, j), f.kbar.at(i, j - 1));
  }
  EXPECT_THROW(sequential_empirical(svc, 400, g, e), std::invalid_argument);
}

TEST(SequentialEmpirical, DkwBound) {
  const auto e = ServiceModel::exponential(1.0);
  std::vector<double> xs;
  for (int i = 0; i <= 400; ++i) xs.push_back(i * 0.02);
  const Grid g({1.0}, xs);
  int ok = 0;
  for (int seed = 0; seed < 40; ++seed) {
    RandomStream rng(seed);
    std::vector<double> svc(10000);
    for (double& v : svc) v = e.sample(rng);
    const auto f = sequential_empirical(svc, 10000, g, e);
    double sup = 0.0;
    for (std::size_t j = 0; j < xs.size(); ++j) sup = std::max(sup, std::abs(f.kbar.at(0, j) - e.cdf(xs[j])));
    ok += sup < 0.02;
  }
  EXPECT_GE(ok, 38);
}

TEST(ComposedEmpirical, Examples) {
  const auto e = ServiceModel::exponential(1.0);
  SimulationTrace empty;
  empty.horizon = 1.0;
  for (double v : composed_empirical(empty, Grid({1.0}, {0.0, 1.0}), e).values) EXPECT_EQ(v, 0.0);

  const auto tr = sim(ArrivalModel::poisson(1.0), e, 100, 4);
  const auto r = composed_empirical(tr, Grid({0.5, 1.0, 2.0}, {0.0, 0.8, kInf}), e);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.at(i, 0), 0.0);
    EXPECT_EQ(r.at(i, 2), 0.0);
  }
}

// Var Rhat_n(1,x) ~ a-bar(1) F(x) F^c(x), and Rhat is nearly uncorrelated with Ahat_n(1).
TEST(ComposedEmpirical, VarianceAndIndependenceFromArrivals) {
  const auto a = ArrivalModel::poisson(1.0);
  const auto e = ServiceModel::exponential(1.0);
  const double med = std::log(2.0);
  const Grid g({1.0}, {0.3, med, 1.5});
  std::vector<MomentAccumulator> acc(3);
  CovarianceAccumulator cov;
  for (int rep = 0; rep < 2000; ++rep) {
    const auto tr = sim(a, e, 400, substream_id(2, "rhat", 400, rep, Component::arrivals), 1.0);
    const auto r = composed_empirical(tr, g, e);
    for (std::size_t j = 0; j < 3; ++j) acc[j].add(r.at(0, j));
    cov.add(std::sqrt(400.0) * (tr.arrived_by(1.0) / 400.0 - 1.0), r.at(0, 1));
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const double target = e.cdf(g.y[j]) * e.ccdf(g.y[j]);
    EXPECT_NEAR(acc[j].variance(), target, 0.15 * target);
  }
  EXPECT_LT(std::abs(cov.correlation()), 0.08);
}

TEST(SplitArrivals, PurelyContinuous) {
  const auto e = ServiceModel::exponential(1.0);
  const auto tr = sim(ArrivalModel::poisson(1.0), e, 200, 5);
  const auto sp = split_arrivals(tr, decompose(e));
  for (double t : {0.5, 2.0}) {
    auto c = sp.counts(tr, t);
    EXPECT_EQ(c.continuous, static_cast<long>(tr.arrived_by(t)));
    EXPECT_EQ(c.discrete, 0);
  }
}

TEST(SplitArrivals, AtomOrderAndFrequency) {
  const auto m = ServiceModel::finite_atoms({{1.0, 0.3}, {2.0, 0.7}});
  const auto tr = sim(ArrivalModel::poisson(1.0), m, 50000, 6);
  const auto sp = split_arrivals(tr, decompose(m));
  const auto c = sp.counts(tr, 2.0);
  const double total = static_cast<double>(tr.arrived_by(2.0));
  EXPECT_GT(total, 90000.0);
  EXPECT_NEAR(c.per_atom[0] / total, 0.7, 0.01);
  EXPECT_EQ(c.continuous, 0);
}

TEST(SplitArrivals, MixturePartitions) {
  const auto m = ServiceModel::mixture(0.5, ServiceModel::exponential(1.0),
                                       ServiceModel::finite_atoms({{1.0, 0.6}, {0.5, 0.4}}));
  const auto tr = sim(ArrivalModel::poisson(1.0), m, 500, 7);
  const auto d = decompose(m);
  const auto sp = split_arrivals(tr, d);
  for (double t : {0.25, 1.0, 2.0}) {
    const auto c = sp.counts(tr, t);
    long per = 0;
    for (long v : c.per_atom) per += v;
    EXPECT_EQ(per, c.discrete);
    EXPECT_EQ(c.continuous + c.discrete, static_cast<long>(tr.arrived_by(t)));
  }
  for (std::size_t i = 0; i < tr.services.size(); ++i) {
    const int lab = sp.labels[i];
    if (lab >= 0) EXPECT_EQ(tr.services[i], d.atoms[static_cast<std::size_t>(lab)].point);
    else EXPECT_TRUE(tr.services[i] != 1.0 && tr.services[i] != 0.5);
  }
}

TEST(SplitArrivals, UnmatchedValueUnderPurelyAtomicModelIsAnError) {
  SimulationTrace tr;
  tr.horizon = 1.0;
  tr.arrivals = {0.5};
  tr.services = {1.5};
  EXPECT_THROW(split_arrivals(tr, decompose(ServiceModel::deterministic(1.0))), std::invalid_argument);
}

TEST(DecomposeHatQr, EmptyTraceIsZero) {
  SimulationTrace tr;
  tr.horizon = 1.0;
  const Grid g({0.5, 1.0}, {0.0, 0.5});
  const auto a = ArrivalModel::poisson(1.0);
  const auto e = ServiceModel::exponential(1.0);
  const auto d = decompose_hatQr(tr, g, TwoParamField("zero", g), e, a);
  for (double v : d.x2.values) EXPECT_EQ(v, 0.0);
  for (double v : d.qhat.values) EXPECT_EQ(v, 0.0);
  for (double v : d.x1.values) EXPECT_EQ(v, 0.0);
}

TEST(DecomposeHatQr, RefusesAtoms) {
  const auto m = ServiceModel::mixture(0.5, ServiceModel::exponential(1.0), ServiceModel::finite_atoms({{1.0, 1.0}}));
  const auto a = ArrivalModel::poisson(1.0);
  const auto tr = sim(a, m, 10, 1);
  const Grid g({1.0}, {0.0});
  EXPECT_THROW(decompose_hatQr(tr, g, TwoParamField("c", g), m, a), std::invalid_argument);
}

// X1 + X2 = Qhat exactly, and X1 agrees with the integration-by-parts route.
TEST(DecomposeHatQr, AdditivityAndPartsAgree) {
  const std::vector<std::pair<ArrivalModel, ServiceModel>> models = {
      {ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0)},
      {ArrivalModel::nhpp(RateFunction::sinusoidal(1.0, 0.5, 3.0, 0.0)), ServiceModel::lognormal(-0.2, 0.6)},
      {ArrivalModel::renewal(ServiceModel::uniform(0.0, 2.0)), ServiceModel::uniform(0.2, 1.2)},
  };
  const Grid g({0.5, 1.0, 2.0}, {0.0, 0.3, 1.0});
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto& [a, s] = models[m];
    const auto c = fluid(a, s, g);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto tr = sim(a, s, 200, 40 + seed);
      const auto d = decompose_hatQr(tr, g, c, s, a);
      for (std::size_t k = 0; k < g.size(); ++k) {
        ASSERT_NEAR(d.x1.values[k] + d.x2.values[k], d.qhat.values[k], 1e-9);
        ASSERT_NEAR(d.x1.values[k], d.x1_parts.values[k], 1e-8);
      }
    }
  }
}

// Var X2hat(1,0) for M/M/inf at n=400 is int_0^1 F(u) F^c(u) du = 0.199788.
TEST(DecomposeHatQr, MartingaleVarianceMMInfinity) {
  const auto a = ArrivalModel::poisson(1.0);
  const auto e = ServiceModel::exponential(1.0);
  const Grid g({1.0}, {0.0});
  const auto c = fluid(a, e, g);
  MomentAccumulator acc;
  for (int rep = 0; rep < 2000; ++rep) {
    const auto tr = sim(a, e, 400, substream_id(5, "x2", 400, rep, Component::arrivals), 1.0);
    acc.add(decompose_hatQr(tr, g, c, e, a).x2.values[0]);
  }
  const double target = oracle::mm_var_service(1, 1, 1, 0);
  EXPECT_NEAR(target, 0.199788, 1e-6);
  EXPECT_NEAR(acc.variance(), target, 0.15 * target);
}
