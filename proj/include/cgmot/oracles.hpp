#pragma once

// Reference implementations used to validate the solvers: closed forms,
// enumeration and extended-precision solves. Not tuned for speed; every entry
// point refuses instances beyond a few states.

#include "cgmot/noisy_ot.hpp"
#include "cgmot/types.hpp"

#include <optional>
#include <vector>

namespace cgmot::oracles {

/// Closed-form entropic barycenter on a line of n cells between a = (F, 0, ..., 0)
/// and b = (0, ..., 0, F) with cost |i - j|.
struct WbLineResult {
  /// Empty exactly when non_unique is set.
  std::optional<Histogram<double>> histogram;
  /// epsilon = 0 and t = 1/2: every histogram of mass F is optimal.
  bool non_unique = false;
};

/// epsilon > 0: c_i = F e^{-k_i / eps} / sum_j e^{-k_j / eps} with
/// k_i = (1 - 2t) i + t n + t - 1 (i = 1..n). epsilon = 0: a for t < 1/2, b for
/// t > 1/2, the non-unique marker at t = 1/2. The epsilon > 0 form assumes the
/// optimum is interior (c > 0), which the softmax always satisfies.
WbLineResult analytic_wb_line(Index n, double mass, double t, double epsilon);

/// Integer contingency table of F samples from the two-node model psi.
struct ExactCGMInstance {
  Kernel<double> psi;
  long mass = 0;
  /// n x n table of non-negative integers (stored as doubles).
  Matrix<double> table;
};

/// log Pr(t) = log F! - F log Z + sum_ij [t_ij log psi_ij - log t_ij!], computed
/// with log-gamma in long double. Returns -infinity for tables outside the
/// support (non-integer entries or total != F). Negative entries throw.
double exact_cgm_log_joint(const ExactCGMInstance& instance);

/// Every n x n table of non-negative integers summing to F.
std::vector<Matrix<double>> enumerate_tables(Index n, long mass);

struct BruteForceResult {
  /// One plan for epsilon > 0; every optimal vertex for epsilon = 0.
  std::vector<TransportPlan<double>> plans;
  double value = 0;
};

/// Entropic OT by damped Newton on the dual in long double (n <= 5, eps > 0),
/// or exact OT by enumerating the vertices of the transportation polytope
/// (n <= 4, eps = 0).
BruteForceResult brute_force_plan(const Histogram<double>& a, const Histogram<double>& b,
                                  const CostMatrix<double>& cost, double epsilon);

/// min_tau G_C^1(tau) + |alpha - tau 1|^2 / (2 sa^2) + |beta - tau^T 1|^2 / (2 sb^2)
/// over tau > 0, by damped Newton directly on the n^2 entries in long double
/// (n <= 5). Independent of the scaling iteration.
BruteForceResult gaussian_uot_plan(const Histogram<double>& alpha, const Histogram<double>& beta,
                                   const CostMatrix<double>& cost, double sigma_a, double sigma_b);

/// All vertices of the transportation polytope U(a, b) (n <= 4).
std::vector<TransportPlan<double>> transportation_vertices(const Histogram<double>& a, const Histogram<double>& b);

/// argmin_{x > 0} x log(x / u) - x + u + A(x) for one coordinate, by
/// golden-section search in 50-digit arithmetic.
double prox_oracle_1d(const NoiseModel& model, double observed, double u, double mass);

struct MapeResult {
  double value = 0;
  /// Cells with zero truth, left out of the mean.
  Index excluded = 0;
};

/// (1/m) sum_i |(truth_i - estimate_i) / truth_i| over the m cells with
/// positive truth.
MapeResult mape(const Histogram<double>& estimate, const Histogram<double>& truth);

/// exp(s Q) by Pade scaling-and-squaring (Eigen MatrixFunctions).
Matrix<double> dense_expm(const Matrix<double>& rates, double s);

}  // namespace cgmot::oracles
