#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

#include "freehunch/matrix_core.hpp"
#include "freehunch/random.hpp"
#include "freehunch/score_oracle.hpp"

namespace fhtest {

using freehunch::Index;
using freehunch::Matrix;
using freehunch::Rng;
using freehunch::Vector;

/// Real parts of a random SPD diagonal-plus-low-rank matrix and its dense form.
struct LowRankCase {
  Vector d;
  Matrix u;
  Matrix v;
  Matrix dense;

  freehunch::LowRankDiagMatrix lr(Index cap = freehunch::kDefaultRankCap) const {
    return freehunch::LowRankDiagMatrix::from_real(d, u, v, cap);
  }
};

inline Matrix random_matrix(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) m.col(j) = freehunch::standard_normal(rng, rows);
  return m;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * freehunch::uniform01(rng); }

inline LowRankCase random_spd_case(Rng& rng, Index n, Index k1, Index k2) {
  for (;;) {
    LowRankCase c;
    c.d = Vector(n);
    for (Index i = 0; i < n; ++i) c.d(i) = uniform(rng, 1.0, 3.0);
    c.u = 0.6 * random_matrix(rng, n, k1);
    c.v = 0.3 * random_matrix(rng, n, k2);
    c.dense = Matrix(c.d.asDiagonal()) + c.u * c.u.transpose() - c.v * c.v.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c.dense);
    if (eig.eigenvalues()(0) > 0.05) return c;
  }
}

inline double rel_frobenius(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

inline Matrix random_spd(Rng& rng, Index n, double floor = 0.1) {
  const Matrix a = random_matrix(rng, n, n);
  Matrix s = a * a.transpose() / static_cast<double>(n);
  s.diagonal().array() += floor;
  return 0.5 * (s + s.transpose());
}

inline freehunch::GaussianMixture random_mixture(Rng& rng, Index n, Index k, double spread = 2.0) {
  Vector w(k);
  for (Index i = 0; i < k; ++i) w(i) = uniform(rng, 0.5, 1.5);
  w /= w.sum();
  std::vector<Vector> means;
  std::vector<freehunch::DenseSymMatrix> covs;
  for (Index i = 0; i < k; ++i) {
    means.push_back(spread * freehunch::standard_normal(rng, n));
    covs.emplace_back(random_spd(rng, n, 0.2));
  }
  return freehunch::GaussianMixture(w, means, covs);
}

/// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Central differences of a vector field, column i = d f / d x_i.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
  Matrix j(x.size(), x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += h;
    b(i) -= h;
    j.col(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return j;
}

}  // namespace fhtest
