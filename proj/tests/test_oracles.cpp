#include "cgmot/entropic_ot.hpp"
#include "cgmot/oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cgmot;
using namespace cgmot::oracles;

TEST(AnalyticWbLine, SoftmaxValues) {
  const auto r = analytic_wb_line(10, 100, 0.0, 1.0);
  ASSERT_TRUE(r.histogram);
  const double z = (1 - std::exp(-10.0)) / (1 - std::exp(-1.0));
  EXPECT_NEAR(r.histogram->values()[0], 100 / z, 1e-12);
  EXPECT_NEAR(r.histogram->values()[1], 100 * std::exp(-1.0) / z, 1e-12);
  const auto mid = analytic_wb_line(4, 8, 0.5, 2.0);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(mid.histogram->values()[i], 2.0, 1e-14);
}

TEST(AnalyticWbLine, MassAndMirror) {
  for (double eps : {0.1, 1.0, 5.0})
    for (double t : {0.0, 0.1, 0.3, 0.5, 0.9}) {
      const auto r = analytic_wb_line(7, 3.5, t, eps), m = analytic_wb_line(7, 3.5, 1 - t, eps);
      EXPECT_NEAR(r.histogram->mass(), 3.5, 1e-12);
      for (Index i = 0; i < 7; ++i) EXPECT_NEAR(r.histogram->values()[i], m.histogram->values()[6 - i], 1e-12);
    }
}

TEST(AnalyticWbLine, Unregularized) {
  const auto lo = analytic_wb_line(5, 2, 0.25, 0.0), hi = analytic_wb_line(5, 2, 0.75, 0.0),
             mid = analytic_wb_line(5, 2, 0.5, 0.0);
  EXPECT_EQ(lo.histogram->values()[0], 2.0);
  EXPECT_EQ(hi.histogram->values()[4], 2.0);
  EXPECT_TRUE(mid.non_unique);
  EXPECT_FALSE(mid.histogram);
  EXPECT_THROW(analytic_wb_line(5, 2, 1.5, 1.0), DomainError);
  EXPECT_THROW(analytic_wb_line(5, 2, 0.5, -1.0), DomainError);
}

TEST(ExactCgm, SingleSample) {
  const Kernel<double> psi(Matrix<double>{{1.0, 2.0}, {3.0, 4.0}});
  const ExactCGMInstance inst{psi, 1, Matrix<double>{{0.0, 0.0}, {1.0, 0.0}}};
  EXPECT_NEAR(exact_cgm_log_joint(inst), std::log(3.0 / 10.0), 1e-15);
}

TEST(ExactCgm, EnumerationIsADistribution) {
  std::mt19937_64 rng(1);
  const auto psi = fixtures::random_kernel(rng, 2);
  const auto tables = enumerate_tables(2, 4);
  EXPECT_EQ(tables.size(), 35u);
  double total = 0;
  for (const auto& t : tables) total += std::exp(exact_cgm_log_joint({psi, 4, t}));
  EXPECT_NEAR(total, 1.0, 1e-13);
}

TEST(ExactCgm, OutsideSupport) {
  const Kernel<double> psi(Matrix<double>::Ones(2, 2));
  EXPECT_EQ(exact_cgm_log_joint({psi, 3, Matrix<double>{{1.0, 1.0}, {0.0, 0.0}}}),
            -std::numeric_limits<double>::infinity());
  EXPECT_EQ(exact_cgm_log_joint({psi, 2, Matrix<double>{{0.5, 1.5}, {0.0, 0.0}}}),
            -std::numeric_limits<double>::infinity());
  EXPECT_THROW(exact_cgm_log_joint({psi, 0, Matrix<double>{{-1.0, 1.0}, {0.0, 0.0}}}), DomainError);
}

TEST(BruteForce, MatchesSinkhorn) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 30; ++rep) {
    const Index n = 2 + rep % 4;
    const double eps = rep % 3 == 0 ? 0.3 : 1.0;
    const auto a = fixtures::random_histogram(rng, n, 1.0), b = fixtures::random_histogram(rng, n, 1.0);
    const auto c = fixtures::random_cost(rng, n);
    const auto oracle = brute_force_plan(a, b, c, eps);
    SolverOptions o;
    o.tolerance = 1e-13;
    const auto s = sinkhorn_plan(a, b, c, eps, o);
    ASSERT_EQ(oracle.plans.size(), 1u);
    EXPECT_LE((oracle.plans[0].entries() - s.plan.entries()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(oracle.value, transport_cost(s.plan, c, eps).total, 1e-9);
  }
}

TEST(BruteForce, VerticesAndTies) {
  const Histogram<double> u(Vector<double>{{1.0, 1.0}});
  EXPECT_EQ(transportation_vertices(u, u).size(), 2u);
  const auto tie = brute_force_plan(u, u, CostMatrix<double>(Matrix<double>::Zero(2, 2)), 0.0);
  EXPECT_EQ(tie.plans.size(), 2u);
  EXPECT_NEAR(tie.value, 0.0, 1e-14);
  const auto line = brute_force_plan(u, u, CostMatrix<double>::line(2), 0.0);
  ASSERT_EQ(line.plans.size(), 1u);
  EXPECT_NEAR(line.plans[0](0, 0), 1.0, 1e-14);
  EXPECT_NEAR(line.value, 0.0, 1e-14);
  EXPECT_THROW(transportation_vertices(Histogram<double>(Vector<double>::Ones(5)), Histogram<double>(Vector<double>::Ones(5))),
               CapabilityError);
}

TEST(Mape, Examples) {
  const Histogram<double> truth(Vector<double>{{1.0, 1.0}});
  EXPECT_NEAR(mape(Histogram<double>(Vector<double>{{1.1, 0.9}}), truth).value, 0.1, 1e-15);
  const auto r = mape(Histogram<double>(Vector<double>{{1.0, 2.2}}), Histogram<double>(Vector<double>{{0.0, 2.0}}));
  EXPECT_NEAR(r.value, 0.1, 1e-15);
  EXPECT_EQ(r.excluded, 1);
  EXPECT_EQ(mape(truth, truth).value, 0.0);
  EXPECT_THROW(mape(truth, Histogram<double>(Vector<double>::Zero(2))), DomainError);
  EXPECT_THROW(mape(truth, Histogram<double>(Vector<double>::Ones(3))), DomainError);
}

TEST(DenseExpm, TwoState) {
  const Matrix<double> q{{-1.0, 1.0}, {1.0, -1.0}};
  const auto e = dense_expm(q, 1.0);
  EXPECT_NEAR(e(0, 0), 0.56766764161830634595, 1e-15);
  EXPECT_NEAR(e(0, 1), 0.43233235838169365405, 1e-15);
  EXPECT_LE((dense_expm(q, 0.0) - Matrix<double>::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GaussianUot, FirstOrderConditions) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 2 + rep % 4;
    const auto al = fixtures::random_histogram(rng, n, 1.0), be = fixtures::random_histogram(rng, n, 1.3);
    const auto c = fixtures::random_cost(rng, n);
    const double sa = 0.2 + 0.1 * (rep % 3), sb = 0.5;
    const auto r = gaussian_uot_plan(al, be, c, sa, sb);
    const Matrix<double>& t = r.plans[0].entries();
    const Vector<double> rows = t.rowwise().sum(), cols = t.colwise().sum().transpose();
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double g = c(i, j) + std::log(t(i, j)) + 1 - (al.values()[i] - rows[i]) / (sa * sa) -
                         (be.values()[j] - cols[j]) / (sb * sb);
        EXPECT_NEAR(g, 0.0, 1e-10);
      }
  }
}

TEST(GaussianUot, TightNoiseApproachesSinkhorn) {
  std::mt19937_64 rng(4);
  const auto a = fixtures::random_histogram(rng, 3, 1.0), b = fixtures::random_histogram(rng, 3, 1.0);
  const auto c = fixtures::random_cost(rng, 3);
  const auto r = gaussian_uot_plan(a, b, c, 1e-3, 1e-3);
  const auto s = sinkhorn_plan(a, b, c, 1.0);
  EXPECT_LE((r.plans[0].entries() - s.plan.entries()).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_THROW(gaussian_uot_plan(Histogram<double>(Vector<double>::Ones(6)), Histogram<double>(Vector<double>::Ones(6)),
                                 CostMatrix<double>::line(6), 1, 1),
               CapabilityError);
}
