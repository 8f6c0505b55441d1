#pragma once

#include "cgmot/entropic_ot.hpp"
#include "cgmot/types.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

namespace cgmot {

/// Observation noise on one side of the transport problem. The induced
/// penalty on a latent marginal x (on the probability scale) is
///   A(x) = -(1/F) log Pr(F * observed | F * x).
///
///   none            A = 0 (the side is unobserved)
///   gaussian(sigma) observed_i ~ N(F x_i, F sigma^2):  |observed - x|^2 / (2 sigma^2)
///   poisson         observed_i ~ Poisson(F x_i):       KL~(observed || x) after Stirling
///   exact_marginal  hard constraint x = observed
class NoiseModel {
 public:
  enum class Kind { none, gaussian, poisson, exact_marginal };

  static NoiseModel none() { return NoiseModel(Kind::none, 0.0); }
  static NoiseModel poisson() { return NoiseModel(Kind::poisson, 0.0); }
  static NoiseModel exact_marginal() { return NoiseModel(Kind::exact_marginal, 0.0); }
  static NoiseModel gaussian(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw ConfigError(detail::concat("gaussian noise needs a positive finite sigma, got ", sigma));
    return NoiseModel(Kind::gaussian, sigma);
  }

  /// Parses "none", "poisson", "exact", "exact_marginal", "gaussian:sigma=<value>".
  static NoiseModel parse(std::string_view spec) {
    if (spec == "none") return none();
    if (spec == "poisson") return poisson();
    if (spec == "exact" || spec == "exact_marginal") return exact_marginal();
    constexpr std::string_view prefix = "gaussian:sigma=";
    if (spec.substr(0, prefix.size()) == prefix) {
      const std::string value(spec.substr(prefix.size()));
      std::size_t used = 0;
      double sigma = 0;
      try {
        sigma = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) throw ConfigError(detail::concat("bad sigma in noise spec '", spec, "'"));
      return gaussian(sigma);
    }
    throw ConfigError(detail::concat("unsupported noise model '", spec,
                                     "' (expected none, poisson, exact or gaussian:sigma=<value>)"));
  }

  Kind kind() const { return kind_; }
  double sigma() const { return sigma_; }

  std::string describe() const {
    switch (kind_) {
      case Kind::none: return "none";
      case Kind::gaussian: return detail::concat("gaussian:sigma=", sigma_);
      case Kind::poisson: return "poisson";
      case Kind::exact_marginal: return "exact";
    }
    return "?";
  }

 private:
  NoiseModel(Kind kind, double sigma) : kind_(kind), sigma_(sigma) {}
  Kind kind_;
  double sigma_;
};

/// Generalised KL divergence sum_i w_i log(w_i / z_i) - w_i + z_i.
template <typename Scalar>
Scalar generalized_kl(const Vector<Scalar>& w, const Vector<Scalar>& z) {
  using std::log;
  if (w.size() != z.size()) throw DomainError("generalized_kl: size mismatch");
  Scalar acc = 0;
  for (Index i = 0; i < w.size(); ++i) {
    if (w[i] == Scalar(0)) {
      acc += z[i];
    } else if (!(z[i] > Scalar(0))) {
      return std::numeric_limits<Scalar>::infinity();
    } else {
      acc += w[i] * log(w[i] / z[i]) - w[i] + z[i];
    }
  }
  return acc;
}

/// A(x) for one side. With asymptotic = false the Gaussian penalty keeps the
/// (n/2) log(2 pi F sigma^2) / F normalisation; the Poisson penalty is the
/// Stirling form in both modes. Exact marginals give 0 when x matches the
/// observation to 1e-8 (relative to max(1, mass)) and +inf otherwise.
template <typename Scalar>
Scalar noise_penalty(const NoiseModel& model, const Vector<Scalar>& observed, const Vector<Scalar>& x, Scalar mass,
                     bool asymptotic) {
  using std::log;
  using std::max;
  if (observed.size() != x.size())
    throw DomainError(detail::concat("observation of size ", observed.size(), " vs marginal of size ", x.size()));
  switch (model.kind()) {
    case NoiseModel::Kind::none: return Scalar(0);
    case NoiseModel::Kind::exact_marginal: {
      const Scalar scale = max(Scalar(1), observed.sum());
      return max_abs_diff<Scalar>(observed, x) <= Scalar(1e-8) * scale ? Scalar(0)
                                                                       : std::numeric_limits<Scalar>::infinity();
    }
    case NoiseModel::Kind::gaussian: {
      const Scalar s2 = Scalar(model.sigma()) * Scalar(model.sigma());
      Scalar value = (observed - x).squaredNorm() / (Scalar(2) * s2);
      if (!asymptotic) {
        if (!(mass > Scalar(0))) throw DomainError("finite-F penalty needs F > 0");
        value += Scalar(observed.size()) / Scalar(2) * log(Scalar(2) * std::numbers::pi_v<Scalar> * mass * s2) / mass;
      }
      return value;
    }
    case NoiseModel::Kind::poisson: return generalized_kl<Scalar>(observed, x);
  }
  return Scalar(0);
}

namespace detail {

/// Solves log(x / u) + A'(x) = 0 for one coordinate, working in y = log x:
/// bracket by doubling steps, then Newton safeguarded by bisection.
template <typename Scalar>
Scalar prox_coordinate(const NoiseModel& model, Scalar observed, Scalar u, Index coordinate) {
  using std::abs;
  using std::exp;
  using std::log;
  using std::max;
  const Scalar log_u = log(u);
  const Scalar s2 = Scalar(model.sigma()) * Scalar(model.sigma());
  const bool gaussian = model.kind() == NoiseModel::Kind::gaussian;

  // h is strictly increasing in y; `scale` bounds the magnitude of its terms.
  auto h = [&](Scalar y, Scalar& slope, Scalar& scale) {
    const Scalar x = exp(y);
    if (gaussian) {
      slope = Scalar(1) + x / s2;
      scale = abs(y) + abs(log_u) + (x + abs(observed)) / s2;
      return y - log_u + (x - observed) / s2;
    }
    const Scalar r = observed * exp(-y);
    slope = Scalar(1) + r;
    scale = abs(y) + abs(log_u) + Scalar(1) + r;
    return y - log_u + Scalar(1) - r;
  };

  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  Scalar slope = 0, scale = 0;
  Scalar y = log_u;
  Scalar f = h(y, slope, scale);
  if (f == Scalar(0)) return exp(y);

  Scalar lo = y, hi = y;
  {
    Scalar step = 1;
    Scalar probe = y;
    Scalar fp = f;
    int expansions = 0;
    while ((f > 0) == (fp > 0) && fp != Scalar(0)) {
      if (++expansions > 200)
        throw NumericError(concat("prox root bracketing failed at coordinate ", coordinate));
      probe = f > 0 ? y - step : y + step;
      Scalar sl = 0, sc = 0;
      fp = h(probe, sl, sc);
      step *= 2;
    }
    if (f > 0) {
      lo = probe;
      hi = y;
    } else {
      lo = y;
      hi = probe;
    }
    if (fp == Scalar(0)) return exp(probe);
  }

  constexpr int kMaxIterations = 60;
  for (int it = 0; it < kMaxIterations; ++it) {
    f = h(y, slope, scale);
    // One last Newton step polishes the root down to rounding.
    if (abs(f) <= Scalar(8) * eps * scale) return exp(y - f / slope);
    if (f > 0) {
      hi = y;
    } else {
      lo = y;
    }
    Scalar next = y - f / slope;
    if (!(next > lo && next < hi)) next = lo + (hi - lo) / Scalar(2);
    if (abs(next - y) <= eps * (Scalar(1) + abs(y))) return exp(next);
    y = next;
  }
  throw NumericError(concat("prox root finder did not converge at coordinate ", coordinate, " (residual ",
                            static_cast<double>(f), ")"));
}

}  // namespace detail

/// KL proximal operator of the noise penalty, coordinate-wise:
///   prox(u) = argmin_{x >= 0} KL~(x || u) + A(x).
/// The scaled penalties are independent of F up to additive constants, so F
/// only enters through validation.
template <typename Scalar>
Vector<Scalar> kl_prox(const NoiseModel& model, const Vector<Scalar>& observed, const Vector<Scalar>& u, Scalar mass) {
  if (observed.size() != u.size())
    throw DomainError(detail::concat("observation of size ", observed.size(), " vs argument of size ", u.size()));
  if (!(mass > Scalar(0))) throw DomainError("kl_prox needs F > 0");
  for (Index i = 0; i < u.size(); ++i)
    if (!(u[i] > Scalar(0)))
      throw DomainError(detail::concat("kl_prox argument must be positive, coordinate ", i, " is ",
                                       static_cast<double>(u[i])));
  switch (model.kind()) {
    case NoiseModel::Kind::none: return u;
    case NoiseModel::Kind::exact_marginal: return observed;
    case NoiseModel::Kind::gaussian:
    case NoiseModel::Kind::poisson: {
      Vector<Scalar> out(u.size());
      for (Index i = 0; i < u.size(); ++i) {
        if (observed[i] < Scalar(0)) throw DomainError(detail::concat("negative observation at ", i));
        out[i] = detail::prox_coordinate<Scalar>(model, observed[i], u[i], i);
      }
      return out;
    }
  }
  return u;
}

/// G_C^1(tau) + A(tau 1) + B(tau^T 1).
template <typename Scalar>
Scalar noisy_objective(const TransportPlan<Scalar>& tau, const Vector<Scalar>& alpha, const Vector<Scalar>& beta,
                       const CostMatrix<Scalar>& cost, const NoiseModel& noise_a, const NoiseModel& noise_b,
                       Scalar mass, bool asymptotic) {
  if (tau.rows() != alpha.size() || tau.cols() != beta.size())
    throw DomainError(detail::concat("plan shape ", tau.rows(), "x", tau.cols(), " does not match observations (",
                                     alpha.size(), ", ", beta.size(), ")"));
  const Scalar base = transport_cost(tau, cost, Scalar(1)).total;
  return base + noise_penalty(noise_a, alpha, Vector<Scalar>(tau.row_sums()), mass, asymptotic) +
         noise_penalty(noise_b, beta, Vector<Scalar>(tau.col_sums()), mass, asymptotic);
}

template <typename Scalar = double>
struct NoisyResult {
  TransportPlan<Scalar> plan;  ///< tau on the probability scale
  SolveReport report;
  Vector<Scalar> u;
  Vector<Scalar> v;
  /// Primal objective (asymptotic form) after every iteration, with record_trace.
  std::vector<double> objective_trace;
};

/// Minimises G_C^1(tau) + A(tau 1) + B(tau^T 1) by the generalised scaling
/// iteration
///   u <- prox_A(K v) / (K v),   v <- prox_B(K^T u) / (K^T u),   K = exp(-C - 1).
/// The extra e^{-1} makes the scaling minimise sum tau log tau rather than
/// sum tau (log tau - 1); the two only differ when the mass is free.
/// alpha and beta are the observations divided by F; their masses may differ.
/// Convergence: max_i |u_i (K v)_i - prox_A(K v)_i| <= tolerance (relative to
/// the mass of alpha when positive); the column condition holds exactly after
/// each v update. With exact marginals on both sides the iterates coincide
/// with Sinkhorn-Knopp at epsilon = 1.
template <typename Scalar>
NoisyResult<Scalar> noisy_ot_solve(const Histogram<Scalar>& alpha, const Histogram<Scalar>& beta,
                                   const CostMatrix<Scalar>& cost, const NoiseModel& noise_a,
                                   const NoiseModel& noise_b, Scalar mass, const SolverOptions& opts = {}) {
  opts.validate();
  detail::check_problem(alpha, beta, cost);
  if (!(mass > Scalar(0))) throw DomainError("mass F must be positive");
  const Index n = cost.size();
  const Matrix<Scalar> kernel = (-cost.entries().array() - Scalar(1)).unaryExpr([](Scalar x) { using std::exp; return exp(x); }).matrix();
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      if (!(kernel(i, j) > Scalar(0)))
        throw NumericError(detail::concat("exp(-C - 1) underflows to zero at (", i, ",", j, ")"));

  const Scalar scale = alpha.mass() > Scalar(0) ? alpha.mass() : Scalar(1);
  NoisyResult<Scalar> out;
  Vector<Scalar> u = Vector<Scalar>::Ones(n);
  Vector<Scalar> v = Vector<Scalar>::Ones(n);
  SolveReport report;
  try {
    Vector<Scalar> kv = kernel * v;
    for (int it = 0;; ++it) {
      const Vector<Scalar> target = kl_prox<Scalar>(noise_a, alpha.values(), kv, mass);
      if (it > 0) {
        report.residual = static_cast<double>(max_abs_diff<Scalar>(u.cwiseProduct(kv), target) / scale);
        if (report.residual <= opts.tolerance) {
          report.converged = true;
          break;
        }
      }
      if (it == opts.max_iterations) break;
      u = guarded_divide<Scalar>(target, kv, opts.epsilon_floor);
      const Vector<Scalar> ktu = kernel.transpose() * u;
      v = guarded_divide<Scalar>(kl_prox<Scalar>(noise_b, beta.values(), ktu, mass), ktu, opts.epsilon_floor);
      kv = kernel * v;
      report.iterations = it + 1;
      if (opts.record_trace) {
        const TransportPlan<Scalar> tau(u.asDiagonal() * kernel * v.asDiagonal());
        out.objective_trace.push_back(static_cast<double>(
            noisy_objective(tau, alpha.values(), beta.values(), cost, noise_a, noise_b, mass, true)));
      }
    }
  } catch (const DivisionGuardError& e) {
    throw NumericError(detail::concat("scaling iteration broke down at coordinate ", e.index(), ": ", e.what()));
  }

  out.plan = TransportPlan<Scalar>(u.asDiagonal() * kernel * v.asDiagonal());
  out.u = u;
  out.v = v;
  report.objective = static_cast<double>(
      noisy_objective(out.plan, alpha.values(), beta.values(), cost, noise_a, noise_b, mass, true));
  out.report = report;
  return out;
}

}  // namespace cgmot
