#pragma once

#include "cgmot/types.hpp"

namespace cgmot {

/// Transition rate matrix of a continuous-time Markov chain.
///
/// Off-diagonal rates must be non-negative and every row must sum to zero up
/// to 1e-12 (relative to the largest rate in the row). After validation the
/// diagonal is recomputed as the negated off-diagonal row sum, so Q 1 = 0 holds
/// to the last bit. Rows that are entirely zero describe absorbing states.
template <typename Scalar = double>
class CTMCModel {
 public:
  CTMCModel() = default;

  explicit CTMCModel(Matrix<Scalar> rates) : dense_(std::move(rates)) {
    using std::abs;
    using std::max;
    if (dense_.rows() != dense_.cols())
      throw DomainError(detail::concat("rate matrix must be square, got ", dense_.rows(), "x", dense_.cols()));
    const Index n = dense_.rows();
    for (Index i = 0; i < n; ++i) {
      Scalar off = 0;
      Scalar scale = abs(dense_(i, i));
      for (Index j = 0; j < n; ++j) {
        if (!std::isfinite(static_cast<double>(dense_(i, j))))
          throw DomainError(detail::concat("rate entry (", i, ",", j, ") is not finite"));
        if (j == i) continue;
        if (dense_(i, j) < Scalar(0))
          throw DomainError(detail::concat("off-diagonal rate (", i, ",", j, ") is negative"));
        off += dense_(i, j);
        scale = max(scale, dense_(i, j));
      }
      if (abs(off + dense_(i, i)) > Scalar(1e-12) * max(scale, Scalar(1)))
        throw DomainError(detail::concat("row ", i, " of the rate matrix does not sum to zero"));
      dense_(i, i) = -off;
    }
    sparse_ = dense_.sparseView();
    sparse_.makeCompressed();
    uniformization_rate_ = n == 0 ? Scalar(0) : dense_.diagonal().cwiseAbs().maxCoeff();
  }

  const Matrix<Scalar>& rates() const { return dense_; }
  const SparseMatrix<Scalar>& sparse_rates() const { return sparse_; }
  Index size() const { return dense_.rows(); }
  /// lambda = max_i |Q_ii|.
  Scalar uniformization_rate() const { return uniformization_rate_; }

 private:
  Matrix<Scalar> dense_;
  SparseMatrix<Scalar> sparse_;
  Scalar uniformization_rate_{0};
};

/// Rate matrix of a random walk on a rows x cols grid: rate q between
/// 4-neighbours, zero otherwise. Cell (r, c) has index r * cols + c.
template <typename Scalar = double>
CTMCModel<Scalar> build_grid_rate_matrix(Index rows, Index cols, Scalar q) {
  if (rows < 1 || cols < 1) throw DomainError("grid needs at least one row and one column");
  if (!(q > Scalar(0))) throw DomainError(detail::concat("grid rate q must be positive, got ", static_cast<double>(q)));
  const Index n = rows * cols;
  Matrix<Scalar> rates = Matrix<Scalar>::Zero(n, n);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const Index i = r * cols + c;
      if (r > 0) rates(i, i - cols) = q;
      if (r + 1 < rows) rates(i, i + cols) = q;
      if (c > 0) rates(i, i - 1) = q;
      if (c + 1 < cols) rates(i, i + 1) = q;
    }
  }
  for (Index i = 0; i < n; ++i) rates(i, i) = -rates.row(i).sum();
  return CTMCModel<Scalar>(std::move(rates));
}

}  // namespace cgmot
