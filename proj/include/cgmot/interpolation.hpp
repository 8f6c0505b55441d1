#pragma once

#include "cgmot/ctmc.hpp"
#include "cgmot/entropic_ot.hpp"
#include "cgmot/types.hpp"

#include <cmath>
#include <concepts>
#include <optional>
#include <variant>
#include <vector>

namespace cgmot {

// ---------------------------------------------------------------------------
// Kernel actions.

/// psi^m x (or (psi^T)^m x) by m successive products, never forming psi^m.
template <typename Scalar>
Vector<Scalar> kernel_power_apply(const Kernel<Scalar>& psi, Index power, const Vector<Scalar>& x, bool transpose) {
  if (power < 0) throw DomainError("kernel power must be non-negative");
  if (x.size() != psi.size())
    throw DomainError(detail::concat("kernel of size ", psi.size(), " applied to vector of size ", x.size()));
  Vector<Scalar> y = x;
  for (Index i = 0; i < power; ++i) y = transpose ? psi.apply_transpose(y) : psi.apply(y);
  return y;
}

/// exp(s Q) x, or exp(s Q)^T x when `transpose` is set (the forward evolution
/// of a distribution), by uniformization:
///   exp(s Q) = e^{-lambda s} sum_m (lambda s)^m / m! P^m,  P = I + Q / lambda,
/// with lambda = max_i |Q_ii|. P is entrywise non-negative, so non-negative
/// inputs give non-negative outputs. The horizon is split so that each step has
/// lambda s <= 30, and each series is cut once the Poisson tail drops below
/// 1e-14.
template <typename Scalar>
Vector<Scalar> expm_action(const CTMCModel<Scalar>& model, Scalar s, const Vector<Scalar>& x, bool transpose) {
  using std::ceil;
  using std::exp;
  using std::sqrt;
  if (!(s >= Scalar(0)) || !std::isfinite(static_cast<double>(s)))
    throw DomainError(detail::concat("expm_action needs a finite time s >= 0, got ", static_cast<double>(s)));
  if (x.size() != model.size())
    throw DomainError(detail::concat("rate matrix of size ", model.size(), " applied to vector of size ", x.size()));
  for (Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(static_cast<double>(x[i]))) throw DomainError(detail::concat("non-finite input at ", i));

  const Scalar lambda = model.uniformization_rate();
  if (s == Scalar(0) || lambda == Scalar(0)) return x;

  const SparseMatrix<Scalar>& q = model.sparse_rates();
  auto step_p = [&](const Vector<Scalar>& v) -> Vector<Scalar> {
    if (transpose) return v + (q.transpose() * v) / lambda;
    return v + (q * v) / lambda;
  };

  constexpr double kMaxStepRate = 30.0;
  constexpr double kTail = 1e-14;
  const Scalar total_rate = lambda * s;
  const long steps = std::max(1L, static_cast<long>(ceil(static_cast<double>(total_rate) / kMaxStepRate)));
  const Scalar rate = total_rate / Scalar(steps);
  const long max_terms = static_cast<long>(static_cast<double>(rate) + 20.0 * sqrt(static_cast<double>(rate)) + 60.0);

  Vector<Scalar> y = x;
  for (long step = 0; step < steps; ++step) {
    Scalar weight = exp(-rate);
    Scalar cumulative = weight;
    Vector<Scalar> term = y;
    Vector<Scalar> acc = weight * term;
    long m = 0;
    while (Scalar(1) - cumulative > Scalar(kTail)) {
      if (++m > max_terms)
        throw NumericError(detail::concat("uniformization series failed to reach its tail bound after ", max_terms,
                                          " terms (lambda s = ", static_cast<double>(rate), ")"));
      term = step_p(term);
      weight *= rate / Scalar(m);
      acc += weight * term;
      cumulative += weight;
    }
    y = std::move(acc);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Linear operators standing in for phi_1, phi_2 and phi_1 phi_2.

template <typename Op, typename Scalar>
concept KernelOperator = requires(const Op& op, const Vector<Scalar>& x) {
  { op.size() } -> std::convertible_to<Index>;
  { op.apply(x) } -> std::convertible_to<Vector<Scalar>>;
  { op.apply_transpose(x) } -> std::convertible_to<Vector<Scalar>>;
};

template <typename Scalar>
class DenseOperator {
 public:
  explicit DenseOperator(Matrix<Scalar> m) : m_(std::move(m)) {}
  Index size() const { return m_.rows(); }
  Vector<Scalar> apply(const Vector<Scalar>& x) const { return m_ * x; }
  Vector<Scalar> apply_transpose(const Vector<Scalar>& x) const { return m_.transpose() * x; }
  const Matrix<Scalar>& matrix() const { return m_; }

 private:
  Matrix<Scalar> m_;
};

template <typename Scalar>
class KernelPowerOperator {
 public:
  KernelPowerOperator(const Kernel<Scalar>& psi, Index power) : psi_(&psi), power_(power) {}
  Index size() const { return psi_->size(); }
  Vector<Scalar> apply(const Vector<Scalar>& x) const { return kernel_power_apply(*psi_, power_, x, false); }
  Vector<Scalar> apply_transpose(const Vector<Scalar>& x) const { return kernel_power_apply(*psi_, power_, x, true); }

 private:
  const Kernel<Scalar>* psi_;
  Index power_;
};

/// exp(time Q).
template <typename Scalar>
class ExpmOperator {
 public:
  ExpmOperator(const CTMCModel<Scalar>& model, Scalar time) : model_(&model), time_(time) {}
  Index size() const { return model_->size(); }
  Vector<Scalar> apply(const Vector<Scalar>& x) const { return expm_action(*model_, time_, x, false); }
  Vector<Scalar> apply_transpose(const Vector<Scalar>& x) const { return expm_action(*model_, time_, x, true); }

 private:
  const CTMCModel<Scalar>* model_;
  Scalar time_;
};

/// Dense matrix of an operator, one column per unit vector.
template <typename Scalar, KernelOperator<Scalar> Op>
Matrix<Scalar> materialize(const Op& op) {
  const Index n = op.size();
  Matrix<Scalar> m(n, n);
  for (Index j = 0; j < n; ++j) m.col(j) = op.apply(Vector<Scalar>::Unit(n, j));
  return m;
}

/// psi^power by repeated squaring.
template <typename Scalar>
Matrix<Scalar> matrix_power(const Matrix<Scalar>& psi, Index power) {
  if (power < 0) throw DomainError("matrix power must be non-negative");
  Matrix<Scalar> result = Matrix<Scalar>::Identity(psi.rows(), psi.cols());
  Matrix<Scalar> base = psi;
  while (power > 0) {
    if (power & 1) result = result * base;
    power >>= 1;
    if (power > 0) base = base * base;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Problem and result types.

/// Undirected path P_N with common edge potential psi; the histogram is read at
/// node k (1-based, 2 <= k <= N - 1).
template <typename Scalar = double>
struct UndirectedPathKernel {
  Kernel<Scalar> psi;
  Index nodes;
  Index interior;
};

/// Continuous-time Markov chain on [0, 1], histogram read at time t.
template <typename Scalar = double>
struct CTMCPathKernel {
  CTMCModel<Scalar> model;
  Scalar time;
};

template <typename Scalar = double>
struct PathInterpolationProblem {
  Histogram<Scalar> a;
  Histogram<Scalar> b;
  std::variant<UndirectedPathKernel<Scalar>, CTMCPathKernel<Scalar>> kernel;
  SolverOptions options{};
  /// Also return the dense plans T1, T2 (costs n kernel applications each).
  bool materialize_plans = true;
};

template <typename Scalar = double>
struct InterpolationResult {
  Histogram<Scalar> c;
  std::optional<TransportPlan<Scalar>> T1;  ///< a <-> c
  std::optional<TransportPlan<Scalar>> T2;  ///< c <-> b
  SolveReport report;
  /// (k - 1) / (N - 1) on undirected paths, t for the Markov chain.
  Scalar realized_time = 0;
  /// a / w and b / y: T1 = diag(left) phi1 diag(z), T2 = diag(x) phi2 diag(right).
  Vector<Scalar> left_scaling;
  Vector<Scalar> right_scaling;
  Vector<Scalar> x;  ///< phi1^T left_scaling
  Vector<Scalar> z;  ///< phi2 right_scaling
};

namespace detail {

template <typename Scalar>
Scalar max_relative_change(const Vector<Scalar>& next, const Vector<Scalar>& prev) {
  using std::abs;
  using std::max;
  Scalar change = 0;
  for (Index i = 0; i < next.size(); ++i) {
    const Scalar denom = max(abs(next[i]), abs(prev[i]));
    if (denom > Scalar(0)) change = max(change, abs(next[i] - prev[i]) / denom);
  }
  return change;
}

template <typename Scalar>
Vector<Scalar> feasible_divide(const Vector<Scalar>& num, const Vector<Scalar>& den, double floor, const char* side) {
  try {
    return guarded_divide<Scalar>(num, den, floor);
  } catch (const DivisionGuardError& e) {
    throw InfeasibleError(concat("no kernel path carries mass to ", side, " state ", e.index(),
                                 "; the kernel support is disconnected for these endpoints"));
  }
}

template <typename Scalar>
Scalar bridge_objective(const Histogram<Scalar>& a, const Histogram<Scalar>& b, const Vector<Scalar>& left,
                        const Vector<Scalar>& right) {
  return weighted_log_sum<Scalar>(a.values(), safe_log<Scalar>(left)) +
         weighted_log_sum<Scalar>(b.values(), safe_log<Scalar>(right));
}

template <typename Scalar, KernelOperator<Scalar> Phi1, KernelOperator<Scalar> Phi2>
void finish_bridge(InterpolationResult<Scalar>& out, const Histogram<Scalar>& a, const Histogram<Scalar>& b,
                   const Phi1& phi1, const Phi2& phi2, bool materialize_plans) {
  out.c = Histogram<Scalar>(Vector<Scalar>(out.x.cwiseProduct(out.z)));
  out.report.objective = static_cast<double>(bridge_objective(a, b, out.left_scaling, out.right_scaling));
  if (materialize_plans) {
    const Matrix<Scalar> m1 = materialize<Scalar>(phi1);
    const Matrix<Scalar> m2 = materialize<Scalar>(phi2);
    out.T1 = TransportPlan<Scalar>(out.left_scaling.asDiagonal() * m1 * out.z.asDiagonal());
    out.T2 = TransportPlan<Scalar>(out.x.asDiagonal() * m2 * out.right_scaling.asDiagonal());
  }
}

}  // namespace detail

/// Histogram at the interior node of the three-node chain a -phi1- c -phi2- b.
///
/// Iterates only on the combined kernel Phi = phi1 phi2:
///   y <- Phi^T (a / w),   w <- Phi (b / y)
/// until the scaling vectors a / w and b / y change by at most the tolerance
/// (relative, max-norm) and the b-side marginal violation is within
/// tolerance * F. Then x = phi1^T (a / w), z = phi2 (b / y) and c = x * z.
template <typename Scalar, KernelOperator<Scalar> Phi1, KernelOperator<Scalar> Phi2, KernelOperator<Scalar> PhiAll>
InterpolationResult<Scalar> bridge_interpolate(const Histogram<Scalar>& a, const Histogram<Scalar>& b,
                                               const Phi1& phi1, const Phi2& phi2, const PhiAll& combined,
                                               const SolverOptions& opts, bool materialize_plans = true) {
  opts.validate();
  require_equal_mass(a, b);
  if (a.size() != combined.size() || b.size() != combined.size())
    throw DomainError("endpoint histograms do not match the kernel size");
  const Scalar mass = a.mass();
  if (!(mass > Scalar(0))) throw DomainError("endpoint histograms have zero mass");

  InterpolationResult<Scalar> out;
  Vector<Scalar> left = a.values();  // a / w with w = 1
  Vector<Scalar> right;
  SolveReport report;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Vector<Scalar> y = combined.apply_transpose(left);
    Vector<Scalar> next_right = detail::feasible_divide<Scalar>(b.values(), y, opts.epsilon_floor, "right endpoint");
    const Vector<Scalar> w = combined.apply(next_right);
    Vector<Scalar> next_left = detail::feasible_divide<Scalar>(a.values(), w, opts.epsilon_floor, "left endpoint");
    Scalar change = detail::max_relative_change<Scalar>(next_left, left);
    if (it > 1) {
      using std::max;
      change = max(change, detail::max_relative_change<Scalar>(next_right, right));
    } else {
      change = std::numeric_limits<Scalar>::infinity();
    }
    left = std::move(next_left);
    right = std::move(next_right);
    report.iterations = it;
    if (change <= Scalar(opts.tolerance) || it == opts.max_iterations) {
      const Vector<Scalar> y_now = combined.apply_transpose(left);
      report.residual = static_cast<double>(max_abs_diff<Scalar>(right.cwiseProduct(y_now), b.values()) / mass);
      if (change <= Scalar(opts.tolerance) && report.residual <= opts.tolerance) {
        report.converged = true;
        break;
      }
    }
  }

  out.left_scaling = left;
  out.right_scaling = right;
  out.x = phi1.apply_transpose(left);
  out.z = phi2.apply(right);
  out.report = report;
  detail::finish_bridge(out, a, b, phi1, phi2, materialize_plans);
  return out;
}

/// Same fixed point through the four-vector loop
///   x <- phi1^T (a / w),  y <- phi2^T x,  z <- phi2 (b / y),  w <- phi1 z,
/// returning x * z. Uses phi1 and phi2 separately, never their product.
template <typename Scalar, KernelOperator<Scalar> Phi1, KernelOperator<Scalar> Phi2>
InterpolationResult<Scalar> bridge_interpolate_loopy(const Histogram<Scalar>& a, const Histogram<Scalar>& b,
                                                     const Phi1& phi1, const Phi2& phi2, const SolverOptions& opts,
                                                     bool materialize_plans = true) {
  opts.validate();
  require_equal_mass(a, b);
  if (a.size() != phi1.size() || b.size() != phi2.size()) throw DomainError("endpoint histograms do not match");
  const Scalar mass = a.mass();
  if (!(mass > Scalar(0))) throw DomainError("endpoint histograms have zero mass");

  InterpolationResult<Scalar> out;
  Vector<Scalar> w = Vector<Scalar>::Ones(a.size());
  Vector<Scalar> left = a.values();
  Vector<Scalar> right;
  Vector<Scalar> x, z;
  SolveReport report;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    x = phi1.apply_transpose(left);
    const Vector<Scalar> y = phi2.apply_transpose(x);
    Vector<Scalar> next_right = detail::feasible_divide<Scalar>(b.values(), y, opts.epsilon_floor, "right endpoint");
    z = phi2.apply(next_right);
    w = phi1.apply(z);
    Vector<Scalar> next_left = detail::feasible_divide<Scalar>(a.values(), w, opts.epsilon_floor, "left endpoint");
    Scalar change = std::numeric_limits<Scalar>::infinity();
    if (it > 1) {
      using std::max;
      change = max(detail::max_relative_change<Scalar>(next_left, left),
                   detail::max_relative_change<Scalar>(next_right, right));
    }
    left = std::move(next_left);
    right = std::move(next_right);
    report.iterations = it;
    if (change <= Scalar(opts.tolerance) || it == opts.max_iterations) {
      x = phi1.apply_transpose(left);
      const Vector<Scalar> y_now = phi2.apply_transpose(x);
      report.residual = static_cast<double>(max_abs_diff<Scalar>(right.cwiseProduct(y_now), b.values()) / mass);
      if (change <= Scalar(opts.tolerance) && report.residual <= opts.tolerance) {
        report.converged = true;
        break;
      }
    }
  }

  out.left_scaling = left;
  out.right_scaling = right;
  out.x = phi1.apply_transpose(left);
  out.z = z;
  out.report = report;
  detail::finish_bridge(out, a, b, phi1, phi2, materialize_plans);
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
void check_path_problem(const PathInterpolationProblem<Scalar>& problem) {
  require_equal_mass(problem.a, problem.b);
  if (problem.a.size() != problem.b.size()) throw DomainError("endpoint histograms differ in size");
  if (const auto* path = std::get_if<UndirectedPathKernel<Scalar>>(&problem.kernel)) {
    if (path->nodes < 3) throw DomainError(concat("path needs N >= 3 nodes, got ", path->nodes));
    if (path->interior < 2 || path->interior > path->nodes - 1)
      throw DomainError(concat("interior node k must lie in [2, ", path->nodes - 1, "], got ", path->interior));
    if (path->psi.size() != problem.a.size()) throw DomainError("kernel size does not match the histograms");
  } else {
    const auto& chain = std::get<CTMCPathKernel<Scalar>>(problem.kernel);
    if (!(chain.time >= Scalar(0) && chain.time <= Scalar(1)))
      throw DomainError(concat("time t must lie in [0, 1], got ", static_cast<double>(chain.time)));
    if (chain.model.size() != problem.a.size()) throw DomainError("rate matrix size does not match the histograms");
  }
}

/// Runs `solve(phi1, phi2, combined)` with the operators of the problem's kernel.
template <typename Scalar, typename Solve>
InterpolationResult<Scalar> with_path_operators(const PathInterpolationProblem<Scalar>& problem, Solve&& solve) {
  check_path_problem(problem);
  InterpolationResult<Scalar> out;
  if (const auto* path = std::get_if<UndirectedPathKernel<Scalar>>(&problem.kernel)) {
    const Index n1 = path->interior - 1;
    const Index n2 = path->nodes - path->interior;
    if (path->psi.is_sparse()) {
      out = solve(KernelPowerOperator<Scalar>(path->psi, n1), KernelPowerOperator<Scalar>(path->psi, n2),
                  KernelPowerOperator<Scalar>(path->psi, n1 + n2));
    } else {
      const Matrix<Scalar> phi1 = matrix_power<Scalar>(path->psi.dense(), n1);
      const Matrix<Scalar> phi2 = matrix_power<Scalar>(path->psi.dense(), n2);
      out = solve(DenseOperator<Scalar>(phi1), DenseOperator<Scalar>(phi2), DenseOperator<Scalar>(phi1 * phi2));
    }
    out.realized_time = Scalar(n1) / Scalar(path->nodes - 1);
  } else {
    const auto& chain = std::get<CTMCPathKernel<Scalar>>(problem.kernel);
    out = solve(ExpmOperator<Scalar>(chain.model, chain.time), ExpmOperator<Scalar>(chain.model, Scalar(1) - chain.time),
                ExpmOperator<Scalar>(chain.model, Scalar(1)));
    out.realized_time = chain.time;
  }
  return out;
}

}  // namespace detail

/// Interpolated histogram at node k (undirected path) or time t (Markov chain)
/// by the combined-kernel iteration.
template <typename Scalar>
InterpolationResult<Scalar> interpolate_path(const PathInterpolationProblem<Scalar>& problem) {
  return detail::with_path_operators(problem, [&](const auto& phi1, const auto& phi2, const auto& combined) {
    return bridge_interpolate<Scalar>(problem.a, problem.b, phi1, phi2, combined, problem.options,
                                      problem.materialize_plans);
  });
}

/// Same contract as interpolate_path, computed by the four-vector loop.
template <typename Scalar>
InterpolationResult<Scalar> interpolate_path_loopy(const PathInterpolationProblem<Scalar>& problem) {
  return detail::with_path_operators(problem, [&](const auto& phi1, const auto& phi2, const auto&) {
    return bridge_interpolate_loopy<Scalar>(problem.a, problem.b, phi1, phi2, problem.options,
                                            problem.materialize_plans);
  });
}

/// Interpolations at every interior node k = 2, ..., N - 1 of an undirected
/// path. phi1 phi2 = psi^(N - 1) does not depend on k, so the scaling vectors
/// are solved once; each k then costs one step of two running products.
/// Element k - 2 of the result is the histogram at node k.
template <typename Scalar>
std::vector<Histogram<Scalar>> interpolate_all_k(const Histogram<Scalar>& a, const Histogram<Scalar>& b,
                                                 const Kernel<Scalar>& psi, Index nodes,
                                                 const SolverOptions& opts = {}, SolveReport* report = nullptr) {
  if (nodes < 3) throw DomainError(detail::concat("path needs N >= 3 nodes, got ", nodes));
  if (psi.size() != a.size()) throw DomainError("kernel size does not match the histograms");

  auto run = [&](const auto& step, const auto& combined) {
    const auto scaled = bridge_interpolate<Scalar>(a, b, step, step, combined, opts, false);
    if (report) *report = scaled.report;
    // forward[k] = (psi^T)^(k-1) left, backward[k] = psi^(N-k) right.
    std::vector<Vector<Scalar>> backward(static_cast<std::size_t>(nodes + 1));
    backward[static_cast<std::size_t>(nodes)] = scaled.right_scaling;
    for (Index k = nodes - 1; k >= 2; --k)
      backward[static_cast<std::size_t>(k)] = step.apply(backward[static_cast<std::size_t>(k + 1)]);
    std::vector<Histogram<Scalar>> out;
    out.reserve(static_cast<std::size_t>(nodes - 2));
    Vector<Scalar> forward = scaled.left_scaling;
    for (Index k = 2; k <= nodes - 1; ++k) {
      forward = step.apply_transpose(forward);
      out.emplace_back(Vector<Scalar>(forward.cwiseProduct(backward[static_cast<std::size_t>(k)])));
    }
    return out;
  };

  if (psi.is_sparse()) return run(KernelPowerOperator<Scalar>(psi, 1), KernelPowerOperator<Scalar>(psi, nodes - 1));
  return run(DenseOperator<Scalar>(psi.dense()), DenseOperator<Scalar>(matrix_power<Scalar>(psi.dense(), nodes - 1)));
}

}  // namespace cgmot
