#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace cgmot {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::ColMajor>;

// ---------------------------------------------------------------------------
// Errors. Every failure the library reports derives from cgmot::Error so the
// CLI can map categories onto exit codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: negative masses, mismatched shapes, malformed graphs.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Floating-point breakdown inside a solver (underflow, failed root finding).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A guarded division hit a (near) zero denominator against a positive numerator.
class DivisionGuardError : public NumericError {
 public:
  DivisionGuardError(const std::string& what, Index index) : NumericError(what), index_(index) {}
  Index index() const { return index_; }

 private:
  Index index_;
};

/// The constraint set is empty, e.g. disconnected kernel support.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Unsupported configuration (unknown noise kind, bad option values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An oracle was asked for an instance larger than it can enumerate.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SolverOptions {
  double tolerance = 1e-9;
  int max_iterations = 10000;
  /// Denominators at or below this value are treated as zero by guarded division.
  double epsilon_floor = 1e-300;
  bool log_domain = false;
  /// Keep per-iteration objective traces in solver results.
  bool record_trace = false;

  void validate() const {
    if (!(tolerance > 0.0)) throw ConfigError(detail::concat("tolerance must be > 0, got ", tolerance));
    if (max_iterations < 1) throw ConfigError(detail::concat("max_iterations must be >= 1, got ", max_iterations));
    if (!(epsilon_floor >= 0.0)) throw ConfigError("epsilon_floor must be >= 0");
  }
};

struct SolveReport {
  int iterations = 0;
  /// Max-norm marginal violation, relative to the total mass.
  double residual = std::numeric_limits<double>::infinity();
  double objective = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
};

// ---------------------------------------------------------------------------
// Scalar helpers.

/// x log x with the continuous extension 0 log 0 = 0.
template <typename Scalar>
inline Scalar xlogx(Scalar x) {
  using std::log;
  return x > Scalar(0) ? x * log(x) : Scalar(0);
}

/// Entrywise a / w with 0 / w = 0. Throws DivisionGuardError when a_i > 0 and
/// w_i <= floor.
template <typename Scalar>
Vector<Scalar> guarded_divide(const Vector<Scalar>& a, const Vector<Scalar>& w, double floor) {
  if (a.size() != w.size()) throw DomainError("guarded_divide: size mismatch");
  Vector<Scalar> out(a.size());
  for (Index i = 0; i < a.size(); ++i) {
    if (a[i] == Scalar(0)) {
      out[i] = Scalar(0);
    } else if (!(w[i] > Scalar(floor))) {
      throw DivisionGuardError(detail::concat("guarded division by ", static_cast<double>(w[i]), " at index ", i,
                                              " with positive numerator ", static_cast<double>(a[i])),
                               i);
    } else {
      out[i] = a[i] / w[i];
    }
  }
  return out;
}

template <typename Scalar>
Scalar max_abs_diff(const Vector<Scalar>& x, const Vector<Scalar>& y) {
  return x.size() == 0 ? Scalar(0) : (x - y).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------

/// Non-negative vector with total mass F.
template <typename Scalar = double>
class Histogram {
 public:
  Histogram() = default;

  explicit Histogram(Vector<Scalar> values) : values_(std::move(values)) {
    for (Index i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(static_cast<double>(values_[i])))
        throw DomainError(detail::concat("histogram entry ", i, " is not finite"));
      if (values_[i] < Scalar(0))
        throw DomainError(detail::concat("histogram entry ", i, " is negative (", static_cast<double>(values_[i]), ")"));
    }
    mass_ = values_.sum();
  }

  static Histogram uniform(Index n, Scalar mass) { return Histogram(Vector<Scalar>::Constant(n, mass / Scalar(n))); }

  const Vector<Scalar>& values() const { return values_; }
  Scalar mass() const { return mass_; }
  Index size() const { return values_.size(); }
  Scalar operator[](Index i) const { return values_[i]; }

  /// Same shape, rescaled to the given total mass.
  Histogram rescaled(Scalar mass) const {
    if (!(mass_ > Scalar(0))) throw DomainError("cannot rescale a zero-mass histogram");
    return Histogram(values_ * (mass / mass_));
  }

  template <typename Other>
  Histogram<Other> cast() const {
    return Histogram<Other>(values_.template cast<Other>());
  }

 private:
  Vector<Scalar> values_;
  Scalar mass_{0};
};

/// Throws DomainError unless both masses agree to `rel` relative accuracy.
template <typename Scalar>
void require_equal_mass(const Histogram<Scalar>& a, const Histogram<Scalar>& b, double rel = 1e-9) {
  using std::abs;
  using std::max;
  const Scalar scale = max(max(abs(a.mass()), abs(b.mass())), Scalar(std::numeric_limits<double>::min()));
  if (abs(a.mass() - b.mass()) > Scalar(rel) * scale)
    throw DomainError(detail::concat("histogram masses differ: ", static_cast<double>(a.mass()), " vs ",
                                     static_cast<double>(b.mass())));
}

// ---------------------------------------------------------------------------

/// Square matrix of finite transport costs.
template <typename Scalar = double>
class CostMatrix {
 public:
  CostMatrix() = default;
  explicit CostMatrix(Matrix<Scalar> entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols())
      throw DomainError(detail::concat("cost matrix must be square, got ", entries_.rows(), "x", entries_.cols()));
    for (Index j = 0; j < entries_.cols(); ++j)
      for (Index i = 0; i < entries_.rows(); ++i)
        if (!std::isfinite(static_cast<double>(entries_(i, j))))
          throw DomainError(detail::concat("cost entry (", i, ",", j, ") is not finite"));
  }

  /// C_ij = |i - j|.
  static CostMatrix line(Index n) {
    Matrix<Scalar> c(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) c(i, j) = Scalar(i > j ? i - j : j - i);
    return CostMatrix(std::move(c));
  }

  const Matrix<Scalar>& entries() const { return entries_; }
  Index size() const { return entries_.rows(); }
  Scalar operator()(Index i, Index j) const { return entries_(i, j); }

 private:
  Matrix<Scalar> entries_;
};

// ---------------------------------------------------------------------------

/// Square matrix of strictly positive potentials. Dense storage requires every
/// entry to be positive; sparse storage requires every *stored* entry to be
/// positive, and entries absent from the pattern are structural zeros.
template <typename Scalar = double>
class Kernel {
 public:
  Kernel() = default;

  explicit Kernel(Matrix<Scalar> dense) : storage_(std::move(dense)) {
    const auto& m = std::get<Matrix<Scalar>>(storage_);
    if (m.rows() != m.cols())
      throw DomainError(detail::concat("kernel must be square, got ", m.rows(), "x", m.cols()));
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i)
        if (!(m(i, j) > Scalar(0)) || !std::isfinite(static_cast<double>(m(i, j))))
          throw DomainError(detail::concat("kernel entry (", i, ",", j, ") = ", static_cast<double>(m(i, j)),
                                           " is not a positive finite number"));
  }

  explicit Kernel(SparseMatrix<Scalar> sparse) : storage_(std::move(sparse)) {
    auto& m = std::get<SparseMatrix<Scalar>>(storage_);
    if (m.rows() != m.cols())
      throw DomainError(detail::concat("kernel must be square, got ", m.rows(), "x", m.cols()));
    m.makeCompressed();
    for (Index k = 0; k < m.outerSize(); ++k)
      for (typename SparseMatrix<Scalar>::InnerIterator it(m, k); it; ++it)
        if (!(it.value() > Scalar(0)) || !std::isfinite(static_cast<double>(it.value())))
          throw DomainError(detail::concat("kernel entry (", it.row(), ",", it.col(), ") = ",
                                           static_cast<double>(it.value()), " is not a positive finite number"));
  }

  /// psi = exp(-C / epsilon) entrywise.
  static Kernel from_cost(const CostMatrix<Scalar>& cost, Scalar epsilon) {
    if (!(epsilon > Scalar(0))) throw DomainError("kernel from cost needs epsilon > 0");
    Matrix<Scalar> k = (-cost.entries().array() / epsilon).unaryExpr([](Scalar x) { using std::exp; return exp(x); }).matrix();
    for (Index j = 0; j < k.cols(); ++j)
      for (Index i = 0; i < k.rows(); ++i)
        if (!(k(i, j) > Scalar(0)))
          throw NumericError(detail::concat("exp(-C/epsilon) underflows to zero at (", i, ",", j,
                                            "); use the log-domain solver"));
    return Kernel(std::move(k));
  }

  Index size() const {
    return std::visit([](const auto& m) { return static_cast<Index>(m.rows()); }, storage_);
  }
  bool is_sparse() const { return std::holds_alternative<SparseMatrix<Scalar>>(storage_); }

  const Matrix<Scalar>& dense() const {
    if (is_sparse()) throw DomainError("kernel is stored sparse");
    return std::get<Matrix<Scalar>>(storage_);
  }
  const SparseMatrix<Scalar>& sparse() const {
    if (!is_sparse()) throw DomainError("kernel is stored dense");
    return std::get<SparseMatrix<Scalar>>(storage_);
  }
  Matrix<Scalar> to_dense() const {
    if (is_sparse()) return Matrix<Scalar>(sparse());
    return dense();
  }

  Vector<Scalar> apply(const Vector<Scalar>& x) const {
    check_size(x);
    return std::visit([&](const auto& m) -> Vector<Scalar> { return m * x; }, storage_);
  }
  Vector<Scalar> apply_transpose(const Vector<Scalar>& x) const {
    check_size(x);
    return std::visit([&](const auto& m) -> Vector<Scalar> { return m.transpose() * x; }, storage_);
  }

  /// Partition function of the two-node model, sum_ij psi_ij.
  Scalar sum() const {
    return std::visit([](const auto& m) -> Scalar { return m.sum(); }, storage_);
  }

  Index nonzeros() const {
    if (is_sparse()) return sparse().nonZeros();
    return size() * size();
  }

 private:
  void check_size(const Vector<Scalar>& x) const {
    if (x.size() != size())
      throw DomainError(detail::concat("kernel of size ", size(), " applied to vector of size ", x.size()));
  }

  std::variant<Matrix<Scalar>, SparseMatrix<Scalar>> storage_;
};

// ---------------------------------------------------------------------------

/// Non-negative coupling matrix. Marginals are derived from the entries.
template <typename Scalar = double>
class TransportPlan {
 public:
  TransportPlan() = default;
  explicit TransportPlan(Matrix<Scalar> entries) : entries_(std::move(entries)) {
    for (Index j = 0; j < entries_.cols(); ++j)
      for (Index i = 0; i < entries_.rows(); ++i)
        if (!(entries_(i, j) >= Scalar(0)) || !std::isfinite(static_cast<double>(entries_(i, j))))
          throw DomainError(detail::concat("plan entry (", i, ",", j, ") = ", static_cast<double>(entries_(i, j)),
                                           " is not a non-negative finite number"));
  }

  const Matrix<Scalar>& entries() const { return entries_; }
  Index rows() const { return entries_.rows(); }
  Index cols() const { return entries_.cols(); }
  Scalar operator()(Index i, Index j) const { return entries_(i, j); }

  Vector<Scalar> row_sums() const { return entries_.rowwise().sum(); }
  Vector<Scalar> col_sums() const { return entries_.colwise().sum().transpose(); }
  Histogram<Scalar> row_marginal() const { return Histogram<Scalar>(row_sums()); }
  Histogram<Scalar> col_marginal() const { return Histogram<Scalar>(col_sums()); }
  Scalar mass() const { return entries_.sum(); }

  /// max(|T 1 - a|_inf, |T^T 1 - b|_inf) / F with F = a.mass().
  Scalar marginal_residual(const Histogram<Scalar>& a, const Histogram<Scalar>& b) const {
    using std::max;
    const Scalar scale = max(a.mass(), Scalar(std::numeric_limits<double>::min()));
    return max(max_abs_diff<Scalar>(row_sums(), a.values()), max_abs_diff<Scalar>(col_sums(), b.values())) / scale;
  }

 private:
  Matrix<Scalar> entries_;
};

// ---------------------------------------------------------------------------

/// C_ij = -log psi_ij. Throws DomainError naming the first non-positive entry
/// (including structural zeros of a sparse kernel).
template <typename Scalar>
CostMatrix<Scalar> cost_from_kernel(const Kernel<Scalar>& kernel) {
  const Matrix<Scalar> psi = kernel.to_dense();
  Matrix<Scalar> c(psi.rows(), psi.cols());
  for (Index j = 0; j < psi.cols(); ++j) {
    for (Index i = 0; i < psi.rows(); ++i) {
      if (!(psi(i, j) > Scalar(0)))
        throw DomainError(detail::concat("kernel entry (", i, ",", j, ") is not positive; cost is undefined"));
      using std::log;
      c(i, j) = -log(psi(i, j));
    }
  }
  return CostMatrix<Scalar>(std::move(c));
}

}  // namespace cgmot
