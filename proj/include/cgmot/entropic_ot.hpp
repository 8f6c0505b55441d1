#pragma once

#include "cgmot/types.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace cgmot {

template <typename Scalar = double>
struct EntropicObjectiveValue {
  Scalar transport_cost = 0;  ///< sum_ij C_ij T_ij
  Scalar entropy_term = 0;    ///< epsilon * sum_ij T_ij log T_ij
  Scalar total = 0;
};

template <typename Scalar = double>
struct SinkhornResult {
  TransportPlan<Scalar> plan;
  SolveReport report;
  /// plan = diag(u) K diag(v) with K = exp(-C / epsilon).
  Vector<Scalar> u;
  Vector<Scalar> v;
  /// log u, log v; -inf where a scaling entry vanishes (zero marginal mass).
  Vector<Scalar> log_u;
  Vector<Scalar> log_v;
  /// Dual objective after every iteration (only with SolverOptions::record_trace).
  std::vector<double> dual_trace;
};

namespace detail {

template <typename Scalar>
Scalar log_sum_exp(const Vector<Scalar>& x) {
  using std::exp;
  using std::log;
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  if (x.size() == 0) return -inf;
  const Scalar m = x.maxCoeff();
  if (m == -inf) return -inf;
  Scalar s = 0;
  for (Index i = 0; i < x.size(); ++i) s += exp(x[i] - m);
  return m + log(s);
}

template <typename Scalar>
Vector<Scalar> safe_log(const Vector<Scalar>& x) {
  using std::log;
  Vector<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i)
    out[i] = x[i] > Scalar(0) ? log(x[i]) : -std::numeric_limits<Scalar>::infinity();
  return out;
}

/// <w, log s> skipping coordinates where w is zero.
template <typename Scalar>
Scalar weighted_log_sum(const Vector<Scalar>& w, const Vector<Scalar>& log_s) {
  Scalar acc = 0;
  for (Index i = 0; i < w.size(); ++i)
    if (w[i] != Scalar(0)) acc += w[i] * log_s[i];
  return acc;
}

template <typename Scalar>
void check_problem(const Histogram<Scalar>& a, const Histogram<Scalar>& b, const CostMatrix<Scalar>& cost) {
  if (a.size() != cost.size() || b.size() != cost.size())
    throw DomainError(concat("histogram sizes (", a.size(), ", ", b.size(), ") do not match cost matrix size ",
                             cost.size()));
}

template <typename Scalar>
SinkhornResult<Scalar> sinkhorn_scaling(const Histogram<Scalar>& a, const Histogram<Scalar>& b,
                                        const CostMatrix<Scalar>& cost, Scalar epsilon, const SolverOptions& opts) {
  using std::exp;
  const Index n = cost.size();
  const Matrix<Scalar> kernel = (-cost.entries().array() / epsilon).unaryExpr([](Scalar x) { using std::exp; return exp(x); }).matrix();
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      if (!(kernel(i, j) > Scalar(0)))
        throw NumericError(concat("exp(-C/epsilon) underflows to zero at (", i, ",", j,
                                  "); rerun with log_domain=true"));

  const Scalar mass = a.mass();
  SinkhornResult<Scalar> out;
  Vector<Scalar> u = Vector<Scalar>::Ones(n);
  Vector<Scalar> v = Vector<Scalar>::Ones(n);
  Vector<Scalar> kv = kernel * v;
  SolveReport report;
  try {
    for (int it = 1; it <= opts.max_iterations; ++it) {
      u = guarded_divide<Scalar>(a.values(), kv, opts.epsilon_floor);
      const Vector<Scalar> ktu = kernel.transpose() * u;
      v = guarded_divide<Scalar>(b.values(), ktu, opts.epsilon_floor);
      kv = kernel * v;
      report.iterations = it;
      report.residual = static_cast<double>(max_abs_diff<Scalar>(u.cwiseProduct(kv), a.values()) / mass);
      if (opts.record_trace) {
        const Scalar total = u.dot(kv);
        out.dual_trace.push_back(static_cast<double>(
            epsilon * (weighted_log_sum<Scalar>(a.values(), safe_log<Scalar>(u)) +
                       weighted_log_sum<Scalar>(b.values(), safe_log<Scalar>(v)) - total + mass)));
      }
      if (report.residual <= opts.tolerance) {
        report.converged = true;
        break;
      }
    }
  } catch (const DivisionGuardError& e) {
    throw NumericError(concat("Sinkhorn scaling broke down (", e.what(), "); rerun with log_domain=true"));
  }

  out.plan = TransportPlan<Scalar>(u.asDiagonal() * kernel * v.asDiagonal());
  out.u = u;
  out.v = v;
  out.log_u = safe_log<Scalar>(u);
  out.log_v = safe_log<Scalar>(v);
  out.report = report;
  return out;
}

/// Log-domain iteration on log u, log v with max-shifted reductions.
template <typename Scalar>
SinkhornResult<Scalar> sinkhorn_log_domain(const Histogram<Scalar>& a, const Histogram<Scalar>& b,
                                           const CostMatrix<Scalar>& cost, Scalar epsilon,
                                           const SolverOptions& opts) {
  using std::exp;
  const Index n = cost.size();
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  const Matrix<Scalar> log_k = -cost.entries() / epsilon;
  const Vector<Scalar> log_a = safe_log<Scalar>(a.values());
  const Vector<Scalar> log_b = safe_log<Scalar>(b.values());
  const Scalar mass = a.mass();

  Vector<Scalar> log_u = Vector<Scalar>::Zero(n);
  Vector<Scalar> log_v = Vector<Scalar>::Zero(n);

  // log (K e^{log_v})_i for every row i.
  auto row_reduce = [&](const Vector<Scalar>& lv) {
    Vector<Scalar> r(n);
    for (Index i = 0; i < n; ++i) r[i] = log_sum_exp<Scalar>(Vector<Scalar>(log_k.row(i).transpose() + lv));
    return r;
  };
  auto col_reduce = [&](const Vector<Scalar>& lu) {
    Vector<Scalar> r(n);
    for (Index j = 0; j < n; ++j) r[j] = log_sum_exp<Scalar>(Vector<Scalar>(log_k.col(j) + lu));
    return r;
  };
  auto update = [&](const Vector<Scalar>& log_target, const Vector<Scalar>& reduced, const char* side) {
    Vector<Scalar> out(n);
    for (Index i = 0; i < n; ++i) {
      if (log_target[i] == -inf) {
        out[i] = -inf;
      } else if (reduced[i] == -inf) {
        throw InfeasibleError(concat("no admissible mass reaches ", side, " index ", i));
      } else {
        out[i] = log_target[i] - reduced[i];
      }
    }
    return out;
  };

  SinkhornResult<Scalar> out;
  SolveReport report;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    log_u = update(log_a, row_reduce(log_v), "row");
    log_v = update(log_b, col_reduce(log_u), "column");
    const Vector<Scalar> rows = row_reduce(log_v);
    Scalar resid = 0;
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
      const Scalar r = log_u[i] == -inf ? Scalar(0) : exp(log_u[i] + rows[i]);
      total += r;
      using std::abs;
      using std::max;
      resid = max(resid, abs(r - a[i]));
    }
    report.iterations = it;
    report.residual = static_cast<double>(resid / mass);
    if (opts.record_trace) {
      out.dual_trace.push_back(static_cast<double>(
          epsilon * (weighted_log_sum<Scalar>(a.values(), log_u) + weighted_log_sum<Scalar>(b.values(), log_v) -
                     total + mass)));
    }
    if (report.residual <= opts.tolerance) {
      report.converged = true;
      break;
    }
  }

  Matrix<Scalar> plan(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) {
      const Scalar l = log_u[i] + log_k(i, j) + log_v[j];
      plan(i, j) = (log_u[i] == -inf || log_v[j] == -inf) ? Scalar(0) : exp(l);
    }
  out.plan = TransportPlan<Scalar>(std::move(plan));
  out.log_u = log_u;
  out.log_v = log_v;
  out.u = log_u.array().exp().matrix();
  out.v = log_v.array().exp().matrix();
  out.report = report;
  return out;
}

}  // namespace detail

/// G_C^eps(T) = sum_ij [C_ij T_ij + eps T_ij log T_ij] with 0 log 0 = 0.
template <typename Scalar>
EntropicObjectiveValue<Scalar> transport_cost(const TransportPlan<Scalar>& plan, const CostMatrix<Scalar>& cost,
                                              Scalar epsilon) {
  if (plan.rows() != cost.size() || plan.cols() != cost.size())
    throw DomainError(detail::concat("plan shape ", plan.rows(), "x", plan.cols(), " does not match cost size ",
                                     cost.size()));
  if (!(epsilon >= Scalar(0))) throw DomainError("epsilon must be non-negative");
  EntropicObjectiveValue<Scalar> value;
  Scalar entropy = 0;
  for (Index j = 0; j < plan.cols(); ++j) {
    for (Index i = 0; i < plan.rows(); ++i) {
      value.transport_cost += cost(i, j) * plan(i, j);
      entropy += xlogx(plan(i, j));
    }
  }
  value.entropy_term = epsilon == Scalar(0) ? Scalar(0) : epsilon * entropy;
  value.total = value.transport_cost + value.entropy_term;
  return value;
}

/// Entropic OT plan between a and b (equal masses) by Sinkhorn-Knopp scaling,
/// starting from v = 1 and stopping when the max-norm row-marginal violation,
/// relative to the mass, drops below opts.tolerance (columns are matched
/// exactly after every half-step). Hitting the iteration cap returns the
/// current plan with report.converged = false.
template <typename Scalar>
SinkhornResult<Scalar> sinkhorn_plan(const Histogram<Scalar>& a, const Histogram<Scalar>& b,
                                     const CostMatrix<Scalar>& cost, Scalar epsilon,
                                     const SolverOptions& opts = {}) {
  opts.validate();
  detail::check_problem(a, b, cost);
  if (!(epsilon > Scalar(0))) throw DomainError("epsilon must be positive");
  require_equal_mass(a, b);
  if (!(a.mass() > Scalar(0))) throw DomainError("histograms have zero mass");

  SinkhornResult<Scalar> result = opts.log_domain ? detail::sinkhorn_log_domain(a, b, cost, epsilon, opts)
                                                  : detail::sinkhorn_scaling(a, b, cost, epsilon, opts);
  result.report.objective = static_cast<double>(transport_cost(result.plan, cost, epsilon).total);
  return result;
}

/// D_C^eps(a, b): the entropic objective at the converged Sinkhorn plan.
/// Throws NumericError if the solver does not converge within the budget.
template <typename Scalar>
Scalar sinkhorn_distance(const Histogram<Scalar>& a, const Histogram<Scalar>& b, const CostMatrix<Scalar>& cost,
                         Scalar epsilon, const SolverOptions& opts = {}) {
  const auto result = sinkhorn_plan(a, b, cost, epsilon, opts);
  if (!result.report.converged)
    throw NumericError(detail::concat("Sinkhorn did not converge in ", result.report.iterations,
                                      " iterations (residual ", result.report.residual, ")"));
  return transport_cost(result.plan, cost, epsilon).total;
}

/// Stirling-approximated negative log joint of the two-node CGM with noiseless
/// observations:
///   L(T) = sum_ij [T_ij log T_ij - T_ij log psi_ij] - F log F + F log Z,
/// Z = sum_ij psi_ij.
template <typename Scalar>
Scalar cgm_log_joint_approx(const TransportPlan<Scalar>& plan, const Kernel<Scalar>& psi, Scalar mass) {
  using std::abs;
  using std::log;
  using std::max;
  if (plan.rows() != psi.size() || plan.cols() != psi.size())
    throw DomainError(detail::concat("plan shape ", plan.rows(), "x", plan.cols(), " does not match kernel size ",
                                     psi.size()));
  if (!(mass > Scalar(0))) throw DomainError("mass F must be positive");
  if (abs(plan.mass() - mass) > Scalar(1e-9) * max(mass, Scalar(1)))
    throw DomainError(detail::concat("plan total ", static_cast<double>(plan.mass()), " differs from F = ",
                                     static_cast<double>(mass)));
  const Matrix<Scalar> k = psi.to_dense();
  Scalar value = 0;
  for (Index j = 0; j < k.cols(); ++j) {
    for (Index i = 0; i < k.rows(); ++i) {
      if (!(k(i, j) > Scalar(0)))
        throw DomainError(detail::concat("kernel entry (", i, ",", j, ") is not positive"));
      value += xlogx(plan(i, j)) - plan(i, j) * log(k(i, j));
    }
  }
  return value - mass * log(mass) + mass * log(psi.sum());
}

}  // namespace cgmot
