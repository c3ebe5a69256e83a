#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "hqinf/queue_sim.hpp"
#include "oracles.hpp"

using namespace hqinf;

namespace {

SimulationTrace one_customer() {
  SimulationTrace tr;
  tr.n = 1;
  tr.horizon = 5.0;
  tr.arrivals = {1.0};
  tr.services = {2.0};
  return tr;
}

SimulationTrace random_trace(const ArrivalModel& a, const ServiceModel& s, long n, std::uint64_t seed,
                             std::optional<InitialCondition> init = std::nullopt) {
  RandomStream rng(seed);
  return simulate(a, s, init, n, 4.0, rng);
}

const Grid& dense_grid() {
  static const Grid g(Grid::linspace(0.0, 4.0, 17), {0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0});
  return g;
}

}  // namespace

TEST(Grid, RejectsBadAxes) {
  EXPECT_THROW(Grid({0.0, 1.0, 1.0}, {0.0}), std::invalid_argument);
  EXPECT_THROW(Grid({1.0, 0.5}, {0.0}), std::invalid_argument);
  EXPECT_THROW(Grid({}, {0.0}), std::invalid_argument);
  EXPECT_THROW(Grid({-1.0}, {0.0}), std::invalid_argument);
  EXPECT_THROW(Grid({1.0}, {std::nan("")}), std::invalid_argument);
  EXPECT_NO_THROW(Grid({1.0}, {0.0, std::numeric_limits<double>::infinity()}));
}

TEST(Simulate, Examples) {
  auto tr = random_trace(ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), 1, 3);
  EXPECT_EQ(tr.services.size(), tr.arrivals.size());
  for (double s : tr.services) EXPECT_GE(s, 0.0);

  RandomStream rng(1);
  auto d = simulate(ArrivalModel::renewal(ServiceModel::deterministic(1.0)), ServiceModel::exponential(1.0), std::nullopt, 2,
                    1.0, rng);
  ASSERT_EQ(d.arrivals.size(), 2u);
  EXPECT_DOUBLE_EQ(d.arrivals[0], 0.5);
  EXPECT_DOUBLE_EQ(d.arrivals[1], 1.0);

  InitialCondition ic{InitialCondition::CountLaw::fixed, 5.0, ServiceModel::exponential(1.0)};
  auto i = random_trace(ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), 100, 4, ic);
  EXPECT_EQ(i.initial_count, 500);
  EXPECT_EQ(i.initial_residuals.size(), 500u);
  for (double r : i.initial_residuals) EXPECT_GT(r, 0.0);
}

TEST(Simulate, RejectsBadScale) {
  RandomStream rng(1);
  EXPECT_THROW(simulate(ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), std::nullopt, 0, 1.0, rng),
               std::invalid_argument);
  EXPECT_THROW(simulate(ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), std::nullopt, 1, 0.0, rng),
               std::invalid_argument);
}

TEST(QueueFields, EmptyTraceIsZero) {
  SimulationTrace tr;
  tr.horizon = 4.0;
  const auto q = eval_queue_fields(tr, dense_grid());
  const auto w = eval_workload_fields(tr, dense_grid());
  for (const auto* f : {&q.qr, &q.qe, &q.qt, &q.d, &w.wr, &w.wt, &w.input, &w.completed})
    for (double v : f->values) EXPECT_EQ(v, 0.0);
}

TEST(QueueFields, SingleCustomer) {
  const auto tr = one_customer();
  const Grid g({2.0}, {0.5, 1.1, 1.5});
  const auto q = eval_queue_fields(tr, g);
  EXPECT_EQ(q.qr.at(0, 0), 1.0);
  EXPECT_EQ(q.qr.at(0, 1), 0.0);
  EXPECT_EQ(q.qe.at(0, 0), 0.0);
  EXPECT_EQ(q.qe.at(0, 2), 1.0);
  EXPECT_EQ(q.qt.at(0, 0), 1.0);
  EXPECT_EQ(q.d.at(0, 0), 0.0);
}

TEST(QueueFields, GridBeyondHorizonIsAnError) {
  EXPECT_THROW(eval_queue_fields(one_customer(), Grid({6.0}, {0.0})), std::invalid_argument);
}

TEST(WorkloadFields, SingleCustomer) {
  const auto w = eval_workload_fields(one_customer(), Grid({2.0}, {0.0, 0.5}));
  EXPECT_DOUBLE_EQ(w.wr.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(w.input.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(w.wt.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(w.completed.at(0, 0), 1.0);
}

TEST(EmpiricalDistributions, Conventions) {
  const Grid g({0.5, 2.0}, {0.0, 0.5, 2.0});
  const auto e = eval_empirical_distributions(one_customer(), g);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(e.age.at(0, j), 0.0);  // nobody present at t=0.5
  EXPECT_EQ(e.age.at(1, 2), 1.0);
  EXPECT_EQ(e.residual_ccdf.at(1, 1), 1.0);
  EXPECT_EQ(e.residual_ccdf.at(1, 0), 1.0);
}

TEST(InitialFields, Examples) {
  SimulationTrace tr;
  tr.horizon = 5.0;
  tr.initial_count = 2;
  tr.initial_residuals = {0.5, 2.0};
  const Grid g({2.0}, {0.5, 1.0});
  auto a = eval_initial_fields(tr, g);
  EXPECT_EQ(a.qir[1], 1.0);

  tr.arrivals = {1.0};
  tr.services = {2.0};
  auto b = eval_initial_fields(tr, g);
  EXPECT_EQ(b.total_r.at(0, 0), 1.0);

  // no initial customers: Q^{T,r} = Q^r
  auto tr2 = random_trace(ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), 50, 12);
  auto c = eval_initial_fields(tr2, dense_grid());
  EXPECT_EQ(c.total_r.values, eval_queue_fields(tr2, dense_grid()).qr.values);
}

// Every field agrees with brute-force counting over the raw epochs.
TEST(QueueFields, MatchBruteForce) {
  const std::vector<ServiceModel> services = {
      ServiceModel::exponential(1.0), ServiceModel::deterministic(0.5),
      ServiceModel::mixture(0.5, ServiceModel::exponential(1.0), ServiceModel::finite_atoms({{0.25, 0.5}, {1.0, 0.5}}))};
  for (std::size_t s = 0; s < services.size(); ++s) {
    const auto tr = random_trace(ArrivalModel::renewal(ServiceModel::deterministic(1.0)), services[s], 8, 20 + s);
    const Grid& g = dense_grid();
    const auto q = eval_queue_fields(tr, g);
    const auto w = eval_workload_fields(tr, g);
    for (std::size_t i = 0; i < g.t.size(); ++i)
      for (std::size_t j = 0; j < g.y.size(); ++j) {
        const double t = g.t[i], y = g.y[j];
        ASSERT_EQ(q.qr.at(i, j), oracle::count_qr(tr, t, y)) << t << "," << y;
        ASSERT_EQ(q.qe.at(i, j), oracle::count_qe(tr, t, y)) << t << "," << y;
        ASSERT_NEAR(w.wr.at(i, j), oracle::work_r(tr, t, y), 1e-10);
      }
  }
}

// Exact identities and monotonicity on random traces, including atoms that put
// departures exactly on grid lines.
TEST(QueueFields, Invariants) {
  const std::vector<std::pair<ArrivalModel, ServiceModel>> models = {
      {ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0)},
      {ArrivalModel::renewal(ServiceModel::deterministic(1.0)), ServiceModel::deterministic(0.5)},
      {ArrivalModel::nhpp(RateFunction::sinusoidal(1.0, 0.5, 2.0, 0.0)), ServiceModel::lognormal(0.0, 1.0)},
      {ArrivalModel::renewal(ServiceModel::uniform(0.0, 2.0)),
       ServiceModel::mixture(0.4, ServiceModel::uniform(0.0, 1.0), ServiceModel::finite_atoms({{0.25, 0.3}, {1.0, 0.7}}))},
  };
  const Grid& g = dense_grid();
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto tr = random_trace(models[m].first, models[m].second, 40, 100 * m + seed);
      const auto q = eval_queue_fields(tr, g);
      const auto w = eval_workload_fields(tr, g);
      for (std::size_t i = 0; i < g.t.size(); ++i) {
        const double t = g.t[i];
        const double arrived = static_cast<double>(tr.arrived_by(t));
        ASSERT_EQ(q.qt.at(i, 0), q.qr.at(i, 0));
        ASSERT_EQ(arrived, q.qt.at(i, 0) + q.d.at(i, 0));
        ASSERT_NEAR(w.input.at(i, 0), w.wt.at(i, 0) + w.completed.at(i, 0), 1e-9 * (1.0 + w.input.at(i, 0)));
        if (auto jt = g.y_index(t)) ASSERT_EQ(q.qe.at(i, *jt), q.qt.at(i, 0));
        for (std::size_t j = 0; j < g.y.size(); ++j) {
          const double y = g.y[j];
          for (const auto* f : {&q.qr, &q.qe, &q.qt, &q.d, &w.wr, &w.wt, &w.input, &w.completed}) ASSERT_GE(f->at(i, j), 0.0);
          if (y <= t)
            if (auto k = g.t_index(t - y)) ASSERT_EQ(q.qe.at(i, j), q.qt.at(i, 0) - q.qr.at(*k, j)) << t << "," << y;
          if (y > t) ASSERT_EQ(q.qe.at(i, j), q.qt.at(i, 0));
          if (j > 0) {
            ASSERT_LE(q.qr.at(i, j), q.qr.at(i, j - 1));
            ASSERT_GE(q.qe.at(i, j), q.qe.at(i, j - 1));
            ASSERT_LE(w.wr.at(i, j), w.wr.at(i, j - 1) + 1e-12);
            // slope of W^r between grid points lies between -Q^r at the ends
            const double h = g.y[j] - g.y[j - 1];
            const double slope = (w.wr.at(i, j) - w.wr.at(i, j - 1)) / h;
            ASSERT_LE(slope, -q.qr.at(i, j) + 1e-9);
            ASSERT_GE(slope, -q.qr.at(i, j - 1) - 1e-9);
          }
          if (i > 0) {
            ASSERT_GE(w.input.at(i, j), w.input.at(i - 1, j));
            ASSERT_GE(w.completed.at(i, j), w.completed.at(i - 1, j) - 1e-12);
            ASSERT_GE(q.d.at(i, j), q.d.at(i - 1, j));
          }
        }
      }
    }
  }
}

// Scaled M/M/inf counts are close to the fluid oracle at large n.
TEST(QueueFields, MMInfinityLargeN) {
  const long n = 20000;
  const auto tr = random_trace(ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), n, 9);
  const Grid g({1.0, 3.0}, {0.0, 0.5, 1.0});
  const auto q = eval_queue_fields(tr, g);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(q.qr.at(i, j) / n, oracle::mm_qr(1, 1, g.t[i], g.y[j]), 0.02);
      EXPECT_NEAR(q.qe.at(i, j) / n, oracle::mm_qe(1, 1, g.t[i], g.y[j]), 0.02);
    }
}

TEST(InitialFields, TotalIsPooledCount) {
  InitialCondition ic{InitialCondition::CountLaw::poisson, 2.0, ServiceModel::uniform(0.0, 3.0)};
  const auto tr = random_trace(ArrivalModel::poisson(1.0), ServiceModel::exponential(1.0), 30, 6, ic);
  const Grid& g = dense_grid();
  const auto f = eval_initial_fields(tr, g);
  const auto q = eval_queue_fields(tr, g);
  for (std::size_t i = 0; i < g.t.size(); ++i)
    for (std::size_t j = 0; j < g.y.size(); ++j) {
      double init = 0.0;
      for (double r : tr.initial_residuals) init += r > g.t[i] + g.y[j];
      ASSERT_EQ(f.total_r.at(i, j), q.qr.at(i, j) + init);
    }
  for (std::size_t j = 0; j < g.y.size(); ++j) {
    double c = 0.0;
    for (double r : tr.initial_residuals) c += r > g.y[j];
    EXPECT_EQ(f.qir[j], c);
  }
}

TEST(FieldCsv, Format) {
  TwoParamField f("Qr", Grid({1.0}, {0.0, 0.5}));
  f.at(0, 1) = 0.1;
  std::ostringstream os;
  write_field_csv(os, f);
  EXPECT_EQ(os.str(), "label,t,y,value\nQr,1,0,0\nQr,1,0.5,0.10000000000000001\n");
}
