#include "cgmot/noisy_ot.hpp"
#include "cgmot/oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace cgmot;

namespace {

/// d/dx of KL~(x || u) + A(x) at x.
double prox_gradient(const NoiseModel& m, double observed, double u, double x) {
  const double base = std::log(x / u);
  if (m.kind() == NoiseModel::Kind::gaussian) return base + (x - observed) / (m.sigma() * m.sigma());
  return base + 1.0 - observed / x;
}

}  // namespace

TEST(NoiseModel, Parse) {
  EXPECT_EQ(NoiseModel::parse("none").kind(), NoiseModel::Kind::none);
  EXPECT_EQ(NoiseModel::parse("poisson").kind(), NoiseModel::Kind::poisson);
  EXPECT_EQ(NoiseModel::parse("exact").kind(), NoiseModel::Kind::exact_marginal);
  EXPECT_EQ(NoiseModel::parse("exact_marginal").kind(), NoiseModel::Kind::exact_marginal);
  const auto g = NoiseModel::parse("gaussian:sigma=0.1");
  EXPECT_EQ(g.kind(), NoiseModel::Kind::gaussian);
  EXPECT_DOUBLE_EQ(g.sigma(), 0.1);
  EXPECT_THROW(NoiseModel::parse("gaussian:sigma=-1"), ConfigError);
  EXPECT_THROW(NoiseModel::parse("gaussian:sigma=abc"), ConfigError);
  EXPECT_THROW(NoiseModel::parse("laplace"), ConfigError);
  EXPECT_EQ(NoiseModel::parse(g.describe()).sigma(), 0.1);
}

TEST(KlProx, ZeroPenaltyIsIdentity) {
  const Vector<double> u{{0.3, 2.0, 7.0}};
  EXPECT_EQ(kl_prox<double>(NoiseModel::none(), Vector<double>::Zero(3), u, 1.0), u);
}

TEST(KlProx, ExactReturnsObservation) {
  const Vector<double> alpha{{0.2, 0.3, 0.5}};
  EXPECT_EQ(kl_prox<double>(NoiseModel::exact_marginal(), alpha, Vector<double>{{5.0, 0.1, 1.0}}, 1.0), alpha);
}

TEST(KlProx, GaussianFrozenRoot) {
  // Root of log(x / 2) + x - 1 = 0 at 40 digits: 1.374822528183623381617...
  const auto x = kl_prox<double>(NoiseModel::gaussian(1.0), Vector<double>{{1.0}}, Vector<double>{{2.0}}, 1.0);
  EXPECT_NEAR(x[0], 1.3748225281836233816, 1e-15);
  EXPECT_NEAR(oracles::prox_oracle_1d(NoiseModel::gaussian(1.0), 1.0, 2.0, 1.0), x[0], 1e-10);
}

TEST(KlProx, PoissonFrozenRoot) {
  // Root of log(x / 2) + 1 - 1 / x = 0 at 40 digits.
  const auto x = kl_prox<double>(NoiseModel::poisson(), Vector<double>{{1.0}}, Vector<double>{{2.0}}, 1.0);
  EXPECT_NEAR(x[0], 1.4596900559154138839, 1e-15);
}

TEST(KlProx, FirstOrderResidualAndOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> logu(-8, 4), logs(-3, 1), obs(0, 3);
  for (int rep = 0; rep < 300; ++rep) {
    const NoiseModel m = rep % 2 ? NoiseModel::poisson() : NoiseModel::gaussian(std::exp(logs(rng)));
    const double o = rep % 17 == 0 ? 0.0 : obs(rng);
    const double u = std::exp(logu(rng));
    const double x = kl_prox<double>(m, Vector<double>{{o}}, Vector<double>{{u}}, 10.0)[0];
    EXPECT_GT(x, 0.0);
    EXPECT_LE(std::abs(prox_gradient(m, o, u, x)), 1e-10) << m.describe() << " o=" << o << " u=" << u;
    if (rep % 10 == 0) {
      const double ref = oracles::prox_oracle_1d(m, o, u, 10.0);
      EXPECT_NEAR(x, ref, 1e-10 * std::max(1.0, ref));
    }
  }
}

TEST(KlProx, Errors) {
  EXPECT_THROW(kl_prox<double>(NoiseModel::poisson(), Vector<double>{{1.0}}, Vector<double>{{0.0}}, 1.0), DomainError);
  EXPECT_THROW(kl_prox<double>(NoiseModel::poisson(), Vector<double>{{1.0, 1.0}}, Vector<double>{{1.0}}, 1.0),
               DomainError);
  EXPECT_THROW(kl_prox<double>(NoiseModel::poisson(), Vector<double>{{1.0}}, Vector<double>{{1.0}}, 0.0), DomainError);
}

TEST(KlProx, OrderIndependent) {
  std::mt19937_64 rng(9);
  const Vector<double> o = fixtures::positive_vector(rng, 50), u = fixtures::positive_vector(rng, 50, 0.01, 10);
  const auto m = NoiseModel::gaussian(0.3);
  const auto full = kl_prox<double>(m, o, u, 1.0);
  for (Index i = 0; i < 50; ++i)
    EXPECT_EQ(full[i], kl_prox<double>(m, Vector<double>{{o[i]}}, Vector<double>{{u[i]}}, 1.0)[0]);
}

TEST(NoisyObjective, Examples) {
  const TransportPlan<double> tau(Matrix<double>{{0.2, 0.1}, {0.3, 0.4}});
  const auto cost = CostMatrix<double>::line(2);
  const double base = transport_cost(tau, cost, 1.0).total;
  const Vector<double> alpha = tau.row_sums();
  const Vector<double> beta{{0.6, 0.4}};
  const auto g = NoiseModel::gaussian(0.5);
  const double gap = (beta - tau.col_sums()).squaredNorm() / (2 * 0.25);
  EXPECT_NEAR(noisy_objective(tau, alpha, beta, cost, g, g, 1.0, true), base + gap, 1e-14);
  const auto p = NoiseModel::poisson();
  EXPECT_NEAR(noisy_objective(tau, alpha, Vector<double>(tau.col_sums()), cost, p, p, 1.0, true), base, 1e-15);
  EXPECT_THROW(noisy_objective(tau, Vector<double>{{1.0}}, beta, cost, p, p, 1.0, true), DomainError);
}

TEST(NoisyObjective, FiniteGaussianGapShrinks) {
  std::mt19937_64 rng(12);
  const TransportPlan<double> tau(fixtures::random_plan(rng, 3, 1.0));
  const Vector<double> alpha = fixtures::random_histogram(rng, 3, 1.0).values();
  const Vector<double> beta = fixtures::random_histogram(rng, 3, 1.0).values();
  const auto cost = fixtures::random_cost(rng, 3);
  const auto g = NoiseModel::gaussian(0.4);
  double prev = std::numeric_limits<double>::infinity();
  for (double f : {1e2, 1e4, 1e6}) {
    const double gap = std::abs(noisy_objective(tau, alpha, beta, cost, g, g, f, false) -
                                noisy_objective(tau, alpha, beta, cost, g, g, f, true));
    // Two sides of n = 3 coordinates each: 2 * (3 / 2) log(2 pi F sigma^2) / F.
    EXPECT_NEAR(gap, 3.0 * std::log(2 * std::numbers::pi * f * 0.16) / f, 1e-12);
    EXPECT_LT(gap, prev);
    prev = gap;
  }
}

TEST(NoisyObjective, PoissonDirection) {
  // KL~(alpha || x) and KL~(x || alpha) differ here; the penalty must be the first.
  const Vector<double> alpha{{0.7, 0.3}};
  const TransportPlan<double> tau(Matrix<double>{{0.25, 0.25}, {0.25, 0.25}});
  const Vector<double> x = tau.row_sums();
  const double forward = generalized_kl<double>(alpha, x);
  const double backward = generalized_kl<double>(x, alpha);
  ASSERT_GT(std::abs(forward - backward), 1e-3);
  const auto cost = CostMatrix<double>::line(2);
  const double base = transport_cost(tau, cost, 1.0).total;
  EXPECT_NEAR(noisy_objective(tau, alpha, Vector<double>(tau.col_sums()), cost, NoiseModel::poisson(),
                              NoiseModel::exact_marginal(), 1.0, true),
              base + forward, 1e-15);
}

TEST(NoisySolve, ExactMarginalsReproduceSinkhornIterates) {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 2 + rep % 6;
    const auto a = fixtures::random_histogram(rng, n, 1), b = fixtures::random_histogram(rng, n, 1);
    const auto cost = fixtures::random_cost(rng, n);
    for (int cap : {1, 2, 5, 10000}) {
      SolverOptions o;
      o.max_iterations = cap;
      const auto s = sinkhorn_plan(a, b, cost, 1.0, o);
      const auto e = noisy_ot_solve(a, b, cost, NoiseModel::exact_marginal(), NoiseModel::exact_marginal(), 1.0, o);
      // The noisy kernel carries an extra e^{-1}, absorbed by u.
      EXPECT_LE((s.u - e.u * std::exp(-1.0)).cwiseAbs().maxCoeff(), 1e-12 * s.u.cwiseAbs().maxCoeff());
      EXPECT_LE((s.v - e.v).cwiseAbs().maxCoeff(), 1e-12 * s.v.cwiseAbs().maxCoeff());
      EXPECT_LE((s.plan.entries() - e.plan.entries()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_EQ(s.report.iterations, e.report.iterations);
      EXPECT_EQ(s.report.converged, e.report.converged);
    }
  }
}

TEST(NoisySolve, PoissonObjectiveRecomputed) {
  std::mt19937_64 rng(15);
  const auto alpha = fixtures::random_histogram(rng, 3, 1), beta = fixtures::random_histogram(rng, 3, 1);
  const auto cost = fixtures::random_cost(rng, 3);
  const auto p = NoiseModel::poisson();
  const auto r = noisy_ot_solve(alpha, beta, cost, p, p, 100.0);
  ASSERT_TRUE(r.report.converged);
  double g = 0;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) g += cost(i, j) * r.plan(i, j) + r.plan(i, j) * std::log(r.plan(i, j));
  auto kl = [](const Vector<double>& w, const Vector<double>& z) {
    double s = 0;
    for (Index i = 0; i < w.size(); ++i) s += w[i] * std::log(w[i] / z[i]) - w[i] + z[i];
    return s;
  };
  const double expect = g + kl(alpha.values(), r.plan.row_sums()) + kl(beta.values(), r.plan.col_sums());
  EXPECT_NEAR(r.report.objective, expect, 1e-9);
}

TEST(NoisySolve, LooseGaussianDriftsTowardFreeOptimum) {
  std::mt19937_64 rng(16);
  const auto alpha = fixtures::random_histogram(rng, 3, 1), beta = fixtures::random_histogram(rng, 3, 1);
  const auto cost = fixtures::random_cost(rng, 3);
  // With A = 0 the row marginal is free: tau_ij ∝ K_ij beta_j / (K^T 1)_j.
  const auto free = noisy_ot_solve(alpha, beta, cost, NoiseModel::none(), NoiseModel::exact_marginal(), 1.0);
  ASSERT_TRUE(free.report.converged);
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {0.1, 1.0, 10.0, 100.0}) {
    const auto r = noisy_ot_solve(alpha, beta, cost, NoiseModel::gaussian(sigma), NoiseModel::exact_marginal(), 1.0);
    ASSERT_TRUE(r.report.converged);
    EXPECT_LE((r.plan.col_sums() - beta.values()).cwiseAbs().maxCoeff(), 1e-12);
    const double dist = (r.plan.row_sums() - free.plan.row_sums()).cwiseAbs().maxCoeff();
    EXPECT_LT(dist, prev);
    prev = dist;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(NoisySolve, ObjectiveTraceDescends) {
  std::mt19937_64 rng(17);
  SolverOptions o;
  o.record_trace = true;
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 2 + rep % 5;
    const auto alpha = fixtures::random_histogram(rng, n, 1), beta = fixtures::random_histogram(rng, n, 1.3);
    const auto cost = fixtures::random_cost(rng, n);
    const NoiseModel a = rep % 2 ? NoiseModel::poisson() : NoiseModel::gaussian(0.2);
    const NoiseModel b = rep % 3 ? NoiseModel::gaussian(0.5) : NoiseModel::poisson();
    const auto r = noisy_ot_solve(alpha, beta, cost, a, b, 50.0, o);
    ASSERT_TRUE(r.report.converged);
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k)
      EXPECT_LE(r.objective_trace[k], r.objective_trace[k - 1] + 1e-10);
  }
}

TEST(NoisySolve, GaussianMatchesNewtonOracle) {
  std::mt19937_64 rng(18);
  for (int rep = 0; rep < 10; ++rep) {
    const auto alpha = fixtures::random_histogram(rng, 3, 1), beta = fixtures::random_histogram(rng, 3, 1);
    const auto cost = fixtures::random_cost(rng, 3);
    const double sa = 0.1 + 0.2 * rep, sb = 0.5 + 0.1 * rep;
    const auto r = noisy_ot_solve(alpha, beta, cost, NoiseModel::gaussian(sa), NoiseModel::gaussian(sb), 1.0);
    ASSERT_TRUE(r.report.converged);
    const auto ref = oracles::gaussian_uot_plan(alpha, beta, cost, sa, sb);
    EXPECT_NEAR(r.report.objective, ref.value, 1e-6);
    EXPECT_LE((r.plan.entries() - ref.plans[0].entries()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(NoisySolve, Errors) {
  const Histogram<double> a(Vector<double>{{0.5, 0.5}});
  EXPECT_THROW(noisy_ot_solve(a, a, CostMatrix<double>::line(3), NoiseModel::poisson(), NoiseModel::poisson(), 1.0),
               DomainError);
  EXPECT_THROW(noisy_ot_solve(a, a, CostMatrix<double>::line(2), NoiseModel::poisson(), NoiseModel::poisson(), 0.0),
               DomainError);
}
