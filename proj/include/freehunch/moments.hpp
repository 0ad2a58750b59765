#pragma once

#include <memory>

#include "freehunch/dct.hpp"
#include "freehunch/matrix_core.hpp"

namespace freehunch {

/// A covariance matrix, optionally stored in an orthonormal DCT basis:
/// the represented operator is Gamma * matrix * Gamma^T when `basis` is set.
struct Covariance {
  CovarianceBackend matrix;
  std::shared_ptr<const DctPlan> basis;

  Index dim() const { return freehunch::dim(matrix); }

  /// Moves a data-space vector into the coordinates `matrix` lives in.
  Vector to_working(const Vector& v) const { return basis ? basis->forward(v) : v; }
  Vector from_working(const Vector& v) const { return basis ? basis->inverse(v) : v; }
};

inline Vector apply(const Covariance& c, const Vector& v) {
  if (!c.basis) return freehunch::apply(c.matrix, v);
  return c.basis->inverse(freehunch::apply(c.matrix, c.basis->forward(v)));
}

inline DenseSymMatrix to_dense(const Covariance& c) {
  DenseSymMatrix inner = to_dense(c.matrix);
  if (!c.basis) return inner;
  const Index n = inner.dim();
  Matrix gamma(n, n);  // columns are basis vectors
  for (Index k = 0; k < n; ++k) gamma.col(k) = c.basis->inverse(Vector::Unit(n, k));
  Matrix full = gamma * inner.entries() * gamma.transpose();
  return DenseSymMatrix(0.5 * (full + full.transpose()));
}

/// Diagonal of the represented operator in data coordinates.
inline Vector diagonal(const Covariance& c) {
  if (!c.basis) return diagonal(c.matrix);
  const Index n = c.dim();
  Vector d(n);
  for (Index i = 0; i < n; ++i) {
    const Vector e = c.basis->forward(Vector::Unit(n, i));
    d(i) = e.dot(freehunch::apply(c.matrix, e));
  }
  return d;
}

/// Estimates of E[x0 | x_t] and Cov[x0 | x_t] at noise level `sigma` and
/// location `location`. Mean and location are in data coordinates.
struct DenoiserMoments {
  Vector mean;
  Covariance covariance;
  double sigma = 0.0;
  Vector location;
};

}  // namespace freehunch
