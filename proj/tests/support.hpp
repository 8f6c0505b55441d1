#pragma once

#include "cgmot/types.hpp"

#include <random>

namespace cgmot::fixtures {

inline Vector<double> positive_vector(std::mt19937_64& rng, Index n, double lo = 0.05, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector<double> v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Histogram<double> random_histogram(std::mt19937_64& rng, Index n, double mass) {
  Vector<double> v = positive_vector(rng, n);
  return Histogram<double>(Vector<double>(v * (mass / v.sum())));
}

inline Kernel<double> random_kernel(std::mt19937_64& rng, Index n, double lo = 0.05, double hi = 1.0) {
  Matrix<double> m(n, n);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) m(i, j) = u(rng);
  return Kernel<double>(std::move(m));
}

inline Matrix<double> random_plan(std::mt19937_64& rng, Index n, double mass) {
  Matrix<double> m(n, n);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) m(i, j) = u(rng);
  return m * (mass / m.sum());
}

inline CostMatrix<double> random_cost(std::mt19937_64& rng, Index n, double hi = 2.0) {
  Matrix<double> m(n, n);
  std::uniform_real_distribution<double> u(0.0, hi);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) m(i, j) = u(rng);
  return CostMatrix<double>(std::move(m));
}

/// Random rate matrix; density controls the fraction of positive off-diagonals.
inline Matrix<double> random_rates(std::mt19937_64& rng, Index n, double density = 0.3, double scale = 1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix<double> q = Matrix<double>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j)
      if (i != j && u(rng) < density) q(i, j) = scale * u(rng);
    q(i, i) = -q.row(i).sum();
  }
  return q;
}

}  // namespace cgmot::fixtures
