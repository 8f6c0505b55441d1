#include "cgmot/oracles.hpp"

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace cgmot::oracles {

using detail::concat;

WbLineResult analytic_wb_line(Index n, double mass, double t, double epsilon) {
  if (n < 1) throw DomainError("line needs at least one cell");
  if (!(mass > 0)) throw DomainError("mass F must be positive");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError(concat("t must lie in [0, 1], got ", t));
  if (!(epsilon >= 0.0)) throw DomainError(concat("epsilon must be non-negative, got ", epsilon));

  WbLineResult out;
  if (epsilon == 0.0) {
    if (t == 0.5) {
      out.non_unique = true;
      return out;
    }
    Vector<double> c = Vector<double>::Zero(n);
    c[t < 0.5 ? 0 : n - 1] = mass;
    out.histogram = Histogram<double>(std::move(c));
    return out;
  }
  Vector<double> logits(n);
  for (Index i = 1; i <= n; ++i) {
    const double k = (1.0 - 2.0 * t) * double(i) + t * double(n) + t - 1.0;
    logits[i - 1] = -k / epsilon;
  }
  const double top = logits.maxCoeff();
  Vector<double> c = (logits.array() - top).exp().matrix();
  c *= mass / c.sum();
  out.histogram = Histogram<double>(std::move(c));
  return out;
}

double exact_cgm_log_joint(const ExactCGMInstance& instance) {
  const auto& t = instance.table;
  const Matrix<double> psi = instance.psi.to_dense();
  if (t.rows() != psi.rows() || t.cols() != psi.cols()) throw DomainError("table shape does not match the kernel");
  if (instance.mass < 0) throw DomainError("mass F must be non-negative");
  long double total = 0;
  bool integral = true;
  for (Index j = 0; j < t.cols(); ++j) {
    for (Index i = 0; i < t.rows(); ++i) {
      if (t(i, j) < 0) throw DomainError(concat("table entry (", i, ",", j, ") is negative"));
      if (t(i, j) != std::floor(t(i, j))) integral = false;
      total += t(i, j);
    }
  }
  if (!integral || total != static_cast<long double>(instance.mass)) return -std::numeric_limits<double>::infinity();

  const long double f = instance.mass;
  long double z = 0;
  for (Index j = 0; j < psi.cols(); ++j)
    for (Index i = 0; i < psi.rows(); ++i) z += psi(i, j);
  long double value = std::lgamma(f + 1.0L) - f * std::log(z);
  for (Index j = 0; j < t.cols(); ++j) {
    for (Index i = 0; i < t.rows(); ++i) {
      const long double k = t(i, j);
      if (k > 0) value += k * std::log(static_cast<long double>(psi(i, j)));
      value -= std::lgamma(k + 1.0L);
    }
  }
  return static_cast<double>(value);
}

std::vector<Matrix<double>> enumerate_tables(Index n, long mass) {
  if (n < 1 || n > 4 || mass < 0 || mass > 12) throw CapabilityError("table enumeration is limited to n <= 4, F <= 12");
  const Index cells = n * n;
  std::vector<Matrix<double>> out;
  std::vector<long> counts(static_cast<std::size_t>(cells), 0);
  std::function<void(Index, long)> place = [&](Index cell, long left) {
    if (cell == cells - 1) {
      counts[static_cast<std::size_t>(cell)] = left;
      Matrix<double> t(n, n);
      for (Index k = 0; k < cells; ++k) t(k / n, k % n) = double(counts[static_cast<std::size_t>(k)]);
      out.push_back(std::move(t));
      return;
    }
    for (long c = 0; c <= left; ++c) {
      counts[static_cast<std::size_t>(cell)] = c;
      place(cell + 1, left - c);
    }
  };
  place(0, mass);
  return out;
}

namespace {

using Ld = long double;
using VecL = Eigen::Matrix<Ld, Eigen::Dynamic, 1>;
using MatL = Eigen::Matrix<Ld, Eigen::Dynamic, Eigen::Dynamic>;

/// Entropic plan on the support rows x cols by Newton on the dual
///   max  <f, a> + <g, b> - eps sum_ij exp((f_i + g_j - C_ij) / eps),
/// with the last g pinned to zero.
MatL newton_entropic(const VecL& a, const VecL& b, const MatL& cost, Ld eps) {
  const Index r = a.size();
  const Index s = b.size();
  VecL f(r), g = VecL::Zero(s);
  for (Index i = 0; i < r; ++i) f[i] = eps * std::log(a[i]);

  auto plan_of = [&](const VecL& ff, const VecL& gg) {
    MatL t(r, s);
    for (Index j = 0; j < s; ++j)
      for (Index i = 0; i < r; ++i) t(i, j) = std::exp((ff[i] + gg[j] - cost(i, j)) / eps);
    return t;
  };
  auto dual = [&](const VecL& ff, const VecL& gg) { return ff.dot(a) + gg.dot(b) - eps * plan_of(ff, gg).sum(); };

  const Ld mass = a.sum();
  for (int it = 0; it < 500; ++it) {
    const MatL t = plan_of(f, g);
    const VecL grad_f = a - t.rowwise().sum();
    const VecL grad_g = b - t.colwise().sum().transpose();
    const Ld gnorm = std::max(grad_f.cwiseAbs().maxCoeff(), grad_g.cwiseAbs().maxCoeff());
    if (gnorm <= 1e-17L * mass) break;

    // Reduced system in (f, g_0 .. g_{s-2}).
    const Index m = r + s - 1;
    MatL h = MatL::Zero(m, m);
    VecL grad(m);
    for (Index i = 0; i < r; ++i) {
      h(i, i) = t.row(i).sum();
      grad[i] = grad_f[i];
    }
    for (Index j = 0; j + 1 < s; ++j) {
      h(r + j, r + j) = t.col(j).sum();
      grad[r + j] = grad_g[j];
      for (Index i = 0; i < r; ++i) {
        h(i, r + j) = t(i, j);
        h(r + j, i) = t(i, j);
      }
    }
    const VecL step = eps * h.ldlt().solve(grad);
    VecL df = step.head(r);
    VecL dg = VecL::Zero(s);
    dg.head(s - 1) = step.tail(s - 1);

    const Ld base = dual(f, g);
    const Ld slope = grad.dot(step);
    Ld alpha = 1;
    for (int ls = 0; ls < 60; ++ls) {
      if (dual(f + alpha * df, g + alpha * dg) >= base + 1e-4L * alpha * slope) break;
      alpha /= 2;
    }
    f += alpha * df;
    g += alpha * dg;
  }
  return plan_of(f, g);
}

}  // namespace

std::vector<TransportPlan<double>> transportation_vertices(const Histogram<double>& a, const Histogram<double>& b) {
  const Index n = a.size();
  if (b.size() != n) throw DomainError("histograms differ in size");
  if (n < 1 || n > 4) throw CapabilityError(concat("vertex enumeration supports n <= 4, got ", n));
  const Index cells = n * n;
  const Index basis = 2 * n - 1;

  Matrix<double> constraints = Matrix<double>::Zero(2 * n, cells);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      constraints(i, i * n + j) = 1;
      constraints(n + j, i * n + j) = 1;
    }
  Vector<double> rhs(2 * n);
  rhs << a.values(), b.values();
  const double scale = std::max(1.0, a.mass());

  std::vector<TransportPlan<double>> vertices;
  std::vector<int> pick(static_cast<std::size_t>(basis));
  std::function<void(Index, Index)> choose = [&](Index start, Index depth) {
    if (depth == basis) {
      Matrix<double> sub(2 * n, basis);
      for (Index k = 0; k < basis; ++k) sub.col(k) = constraints.col(pick[static_cast<std::size_t>(k)]);
      Eigen::FullPivLU<Matrix<double>> lu(sub);
      if (lu.rank() != basis) return;
      const Vector<double> x = sub.colPivHouseholderQr().solve(rhs);
      if ((sub * x - rhs).cwiseAbs().maxCoeff() > 1e-10 * scale) return;
      if (x.minCoeff() < -1e-12 * scale) return;
      Matrix<double> t = Matrix<double>::Zero(n, n);
      for (Index k = 0; k < basis; ++k) {
        const int c = pick[static_cast<std::size_t>(k)];
        t(c / n, c % n) = std::max(0.0, x[k]);
      }
      for (const auto& v : vertices)
        if ((v.entries() - t).cwiseAbs().maxCoeff() <= 1e-10 * scale) return;
      vertices.emplace_back(std::move(t));
      return;
    }
    for (Index c = start; c < cells; ++c) {
      pick[static_cast<std::size_t>(depth)] = static_cast<int>(c);
      choose(c + 1, depth + 1);
    }
  };
  choose(0, 0);
  return vertices;
}

BruteForceResult brute_force_plan(const Histogram<double>& a, const Histogram<double>& b,
                                  const CostMatrix<double>& cost, double epsilon) {
  const Index n = cost.size();
  if (a.size() != n || b.size() != n) throw DomainError("histogram sizes do not match the cost matrix");
  if (!(epsilon >= 0)) throw DomainError("epsilon must be non-negative");
  require_equal_mass(a, b);
  BruteForceResult out;

  if (epsilon == 0.0) {
    if (n > 4) throw CapabilityError(concat("exact OT by vertex enumeration supports n <= 4, got ", n));
    const auto vertices = transportation_vertices(a, b);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : vertices) best = std::min(best, (cost.entries().cwiseProduct(v.entries())).sum());
    const double slack = 1e-9 * std::max(1.0, std::abs(best));
    for (const auto& v : vertices)
      if ((cost.entries().cwiseProduct(v.entries())).sum() <= best + slack) out.plans.push_back(v);
    out.value = best;
    return out;
  }

  if (n > 5) throw CapabilityError(concat("entropic brute force supports n <= 5, got ", n));
  std::vector<Index> rows, cols;
  for (Index i = 0; i < n; ++i) {
    if (a[i] > 0) rows.push_back(i);
    if (b[i] > 0) cols.push_back(i);
  }
  VecL ar(static_cast<Index>(rows.size())), bc(static_cast<Index>(cols.size()));
  MatL c(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) ar[static_cast<Index>(i)] = a[rows[i]];
  for (std::size_t j = 0; j < cols.size(); ++j) bc[static_cast<Index>(j)] = b[cols[j]];
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) c(static_cast<Index>(i), static_cast<Index>(j)) = cost(rows[i], cols[j]);

  const MatL reduced = newton_entropic(ar, bc, c, static_cast<Ld>(epsilon));
  Matrix<double> t = Matrix<double>::Zero(n, n);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      t(rows[i], cols[j]) = static_cast<double>(reduced(static_cast<Index>(i), static_cast<Index>(j)));
  out.plans.emplace_back(t);
  long double value = 0;
  for (Index j = 0; j < reduced.cols(); ++j)
    for (Index i = 0; i < reduced.rows(); ++i) {
      const Ld x = reduced(i, j);
      value += c(i, j) * x + (x > 0 ? static_cast<Ld>(epsilon) * x * std::log(x) : 0.0L);
    }
  out.value = static_cast<double>(value);
  return out;
}

BruteForceResult gaussian_uot_plan(const Histogram<double>& alpha, const Histogram<double>& beta,
                                   const CostMatrix<double>& cost, double sigma_a, double sigma_b) {
  const Index n = cost.size();
  if (n > 5) throw CapabilityError(concat("gaussian_uot_plan handles n <= 5, got ", n));
  if (alpha.size() != n || beta.size() != n) throw DomainError("histogram sizes do not match the cost");
  if (!(sigma_a > 0) || !(sigma_b > 0)) throw DomainError("sigmas must be positive");
  const Ld wa = 1 / (Ld(sigma_a) * Ld(sigma_a));
  const Ld wb = 1 / (Ld(sigma_b) * Ld(sigma_b));
  const VecL al = alpha.values().cast<Ld>(), be = beta.values().cast<Ld>();
  const MatL c = cost.entries().cast<Ld>();
  const Index m = n * n;  // entry (i, j) sits at i * n + j

  auto objective = [&](const VecL& x) {
    Ld v = 0;
    VecL rows = VecL::Zero(n), cols = VecL::Zero(n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const Ld t = x[i * n + j];
        v += c(i, j) * t + t * std::log(t);
        rows[i] += t;
        cols[j] += t;
      }
    return v + wa * (al - rows).squaredNorm() / 2 + wb * (be - cols).squaredNorm() / 2;
  };

  VecL x = VecL::Constant(m, Ld(1) / Ld(m));
  for (int it = 0; it < 200; ++it) {
    VecL rows = VecL::Zero(n), cols = VecL::Zero(n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        rows[i] += x[i * n + j];
        cols[j] += x[i * n + j];
      }
    VecL grad(m);
    MatL hess = MatL::Zero(m, m);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const Index k = i * n + j;
        grad[k] = c(i, j) + std::log(x[k]) + 1 - wa * (al[i] - rows[i]) - wb * (be[j] - cols[j]);
        hess(k, k) += 1 / x[k];
        for (Index l = 0; l < n; ++l) {
          hess(k, i * n + l) += wa;
          hess(k, l * n + j) += wb;
        }
      }
    if (grad.cwiseAbs().maxCoeff() <= 1e-16L) break;
    const VecL step = -hess.ldlt().solve(grad);
    Ld s = 1;
    for (Index k = 0; k < m; ++k)
      if (step[k] < 0) s = std::min(s, Ld(0.99) * -x[k] / step[k]);
    const Ld base = objective(x);
    const Ld slope = grad.dot(step);
    for (int ls = 0; ls < 80; ++ls) {
      if (objective(x + s * step) <= base + 1e-4L * s * slope) break;
      s /= 2;
    }
    x += s * step;
  }

  Matrix<double> plan(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) plan(i, j) = static_cast<double>(x[i * n + j]);
  BruteForceResult out;
  out.plans.emplace_back(std::move(plan));
  out.value = static_cast<double>(objective(x));
  return out;
}

double prox_oracle_1d(const NoiseModel& model, double observed, double u, double mass) {
  using Real = boost::multiprecision::cpp_bin_float_50;
  if (!(u > 0)) throw DomainError("prox oracle needs u > 0");
  if (!(mass > 0)) throw DomainError("prox oracle needs F > 0");
  switch (model.kind()) {
    case NoiseModel::Kind::none: return u;
    case NoiseModel::Kind::exact_marginal: return observed;
    default: break;
  }
  const Real ur = u;
  const Real obs = observed;
  const Real s2 = Real(model.sigma()) * Real(model.sigma());
  const bool gaussian = model.kind() == NoiseModel::Kind::gaussian;
  auto objective = [&](const Real& x) {
    Real value = x * log(x / ur) - x + ur;
    if (gaussian) {
      value += (x - obs) * (x - obs) / (2 * s2);
    } else if (obs > 0) {
      value += obs * log(obs / x) - obs + x;
    } else {
      value += x;
    }
    return value;
  };

  // The minimiser lies in (0, max(u, observed)].
  Real lo = 0;
  Real hi = std::max(u, observed);
  const Real ratio = (sqrt(Real(5)) - 1) / 2;
  Real x1 = hi - ratio * (hi - lo);
  Real x2 = lo + ratio * (hi - lo);
  Real f1 = objective(x1), f2 = objective(x2);
  const Real width = Real(1e-22) * (1 + hi);
  while (hi - lo > width) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = objective(x2);
    }
  }
  return static_cast<double>((lo + hi) / 2);
}

MapeResult mape(const Histogram<double>& estimate, const Histogram<double>& truth) {
  if (estimate.size() != truth.size())
    throw DomainError(concat("estimate has ", estimate.size(), " cells, truth has ", truth.size()));
  MapeResult out;
  double acc = 0;
  Index used = 0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (truth[i] == 0) {
      ++out.excluded;
      continue;
    }
    acc += std::abs((truth[i] - estimate[i]) / truth[i]);
    ++used;
  }
  if (used == 0) throw DomainError("MAPE is undefined: every truth cell is zero");
  out.value = acc / double(used);
  return out;
}

Matrix<double> dense_expm(const Matrix<double>& rates, double s) {
  const Matrix<double> scaled = rates * s;
  return scaled.exp();
}

}  // namespace cgmot::oracles
