#pragma once

// Symmetric matrices stored either densely or as
//
//     M = Diag(d) + U U^T - V V^T
//
// with complex storage and plain (non-conjugate) transposes. Inverting this
// form with two Woodbury applications yields the same form again, but the
// k x k square roots involved may be of indefinite matrices, so the factors
// pick up imaginary parts that cancel in the represented matrix.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <variant>

#include "freehunch/errors.hpp"

namespace freehunch {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr Index kDefaultRankCap = 64;
inline constexpr Index kDenseBudget = 4096;
inline constexpr double kImaginaryTolerance = 1e-8;
inline constexpr double kSymmetryTolerance = 1e-12;

class DenseSymMatrix {
 public:
  DenseSymMatrix() = default;

  /// Takes ownership of `entries`; rejects non-square or visibly asymmetric
  /// input and stores the exactly symmetrized matrix.
  explicit DenseSymMatrix(Matrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols()) {
      throw ContractViolation("DenseSymMatrix: matrix is not square");
    }
    if (!entries_.allFinite()) {
      throw ContractViolation("DenseSymMatrix: non-finite entries");
    }
    const double scale = entries_.cwiseAbs().maxCoeff();
    const double asym = (entries_ - entries_.transpose()).cwiseAbs().maxCoeff();
    if (entries_.size() > 0 && asym > kSymmetryTolerance * std::max(scale, 1e-300)) {
      throw ContractViolation("DenseSymMatrix: asymmetry " + std::to_string(asym) +
                              " exceeds tolerance");
    }
    entries_ = 0.5 * (entries_ + entries_.transpose()).eval();
  }

  static DenseSymMatrix identity(Index n, double scale = 1.0) {
    return DenseSymMatrix(scale * Matrix::Identity(n, n));
  }

  Index dim() const { return entries_.rows(); }
  const Matrix& entries() const { return entries_; }

 private:
  Matrix entries_;
};

class LowRankDiagMatrix {
 public:
  LowRankDiagMatrix() = default;

  LowRankDiagMatrix(CVector diag, CMatrix pos_factors, CMatrix neg_factors,
                    Index rank_cap = kDefaultRankCap)
      : diag_(std::move(diag)),
        pos_(std::move(pos_factors)),
        neg_(std::move(neg_factors)),
        rank_cap_(rank_cap) {
    const Index n = diag_.size();
    if (n <= 0) throw ContractViolation("LowRankDiagMatrix: dimension must be positive");
    if (pos_.cols() == 0) pos_.resize(n, 0);
    if (neg_.cols() == 0) neg_.resize(n, 0);
    if (pos_.rows() != n || neg_.rows() != n) {
      throw ContractViolation("LowRankDiagMatrix: factor row count does not match diagonal");
    }
    if (pos_.cols() > rank_cap_ || neg_.cols() > rank_cap_) {
      throw CapacityError("LowRankDiagMatrix: factor rank exceeds cap " +
                          std::to_string(rank_cap_));
    }
  }

  static LowRankDiagMatrix identity(Index n, double scale = 1.0,
                                    Index rank_cap = kDefaultRankCap) {
    return LowRankDiagMatrix(CVector::Constant(n, scale), CMatrix(n, 0), CMatrix(n, 0),
                             rank_cap);
  }

  static LowRankDiagMatrix from_real(const Vector& diag, const Matrix& pos, const Matrix& neg,
                                     Index rank_cap = kDefaultRankCap) {
    return LowRankDiagMatrix(diag.cast<std::complex<double>>(),
                             pos.cast<std::complex<double>>(),
                             neg.cast<std::complex<double>>(), rank_cap);
  }

  Index dim() const { return diag_.size(); }
  const CVector& diag() const { return diag_; }
  const CMatrix& pos_factors() const { return pos_; }
  const CMatrix& neg_factors() const { return neg_; }
  Index rank_cap() const { return rank_cap_; }

 private:
  CVector diag_;
  CMatrix pos_;
  CMatrix neg_;
  Index rank_cap_ = kDefaultRankCap;
};

using CovarianceBackend = std::variant<LowRankDiagMatrix, DenseSymMatrix>;

namespace detail {

inline void require_dim(Index expected, Index got, const char* where) {
  if (expected != got) {
    throw ContractViolation(std::string(where) + ": dimension mismatch (expected " +
                            std::to_string(expected) + ", got " + std::to_string(got) + ")");
  }
}

/// Principal square root S of a complex symmetric K, so that S S^T = K.
inline CMatrix symmetric_sqrt(const CMatrix& k) {
  if (k.size() == 0) return k;
  CMatrix s = k.sqrt();
  return 0.5 * (s + s.transpose());
}

inline CMatrix checked_inverse(const CMatrix& inner, const char* which) {
  Eigen::PartialPivLU<CMatrix> lu(inner);
  const double rc = lu.rcond();
  if (!(rc > 1e-13)) {
    throw NumericalRankError(std::string("woodbury inner matrix ") + which +
                             " is numerically singular (rcond " + std::to_string(rc) + ")");
  }
  return lu.inverse();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matrix-vector products

inline Vector apply(const LowRankDiagMatrix& m, const Vector& v) {
  detail::require_dim(m.dim(), v.size(), "apply");
  // Real part only; v is real so Re(F F^T v) is accumulated column by column.
  Vector out = m.diag().real().cwiseProduct(v);
  auto add = [&](const CMatrix& f, double sign) {
    for (Index j = 0; j < f.cols(); ++j) {
      const double cr = f.col(j).real().dot(v);
      const double ci = f.col(j).imag().dot(v);
      out += sign * (cr * f.col(j).real() - ci * f.col(j).imag());
    }
  };
  add(m.pos_factors(), 1.0);
  add(m.neg_factors(), -1.0);
  return out;
}

inline Vector apply(const DenseSymMatrix& m, const Vector& v) {
  detail::require_dim(m.dim(), v.size(), "apply");
  return m.entries() * v;
}

inline Vector apply(const CovarianceBackend& m, const Vector& v) {
  return std::visit([&](const auto& x) { return freehunch::apply(x, v); }, m);
}

inline Index dim(const CovarianceBackend& m) {
  return std::visit([](const auto& x) { return x.dim(); }, m);
}

// ---------------------------------------------------------------------------
// dense views

/// Complex dense form of the represented matrix (no checks).
inline CMatrix represented(const LowRankDiagMatrix& m) {
  CMatrix out = m.diag().asDiagonal();
  if (m.pos_factors().cols() > 0) out += m.pos_factors() * m.pos_factors().transpose();
  if (m.neg_factors().cols() > 0) out -= m.neg_factors() * m.neg_factors().transpose();
  return out;
}

/// max |Im M_ij| / max |Re M_ij| of the represented matrix.
inline double imaginary_residual(const LowRankDiagMatrix& m) {
  const CMatrix full = represented(m);
  const double re = full.real().cwiseAbs().maxCoeff();
  const double im = full.imag().cwiseAbs().maxCoeff();
  if (im == 0.0) return 0.0;
  return re > 0.0 ? im / re : std::numeric_limits<double>::infinity();
}

inline DenseSymMatrix to_dense(const LowRankDiagMatrix& m) {
  if (m.dim() > kDenseBudget) {
    throw ContractViolation("to_dense: dimension " + std::to_string(m.dim()) +
                            " exceeds dense budget");
  }
  const CMatrix full = represented(m);
  const double re = full.real().cwiseAbs().maxCoeff();
  const double im = full.imag().cwiseAbs().maxCoeff();
  if (im > kImaginaryTolerance * re) {
    throw RepresentationCorruption("to_dense: imaginary residual " + std::to_string(im) +
                                   " relative to " + std::to_string(re));
  }
  Matrix real = full.real();
  return DenseSymMatrix(0.5 * (real + real.transpose()));
}

inline DenseSymMatrix to_dense(const DenseSymMatrix& m) { return m; }

inline DenseSymMatrix to_dense(const CovarianceBackend& m) {
  return std::visit([](const auto& x) { return to_dense(x); }, m);
}

/// Diagonal of the represented matrix in O(N k).
inline Vector diagonal(const LowRankDiagMatrix& m) {
  Vector d = m.diag().real();
  auto add = [&](const CMatrix& f, double sign) {
    for (Index j = 0; j < f.cols(); ++j) {
      d.array() += sign * (f.col(j).real().array().square() - f.col(j).imag().array().square());
    }
  };
  add(m.pos_factors(), 1.0);
  add(m.neg_factors(), -1.0);
  return d;
}

inline Vector diagonal(const DenseSymMatrix& m) { return m.entries().diagonal(); }

inline Vector diagonal(const CovarianceBackend& m) {
  return std::visit([](const auto& x) { return diagonal(x); }, m);
}

// ---------------------------------------------------------------------------
// real re-factorization and recompression

/// Rewrites the low-rank part as real factors P P^T - Q Q^T (dropping
/// numerically zero modes), keeping at most `max_rank` columns in total by
/// discarding the modes of smallest magnitude. With max_rank large enough the
/// represented matrix is unchanged up to rounding.
inline LowRankDiagMatrix recompress(const LowRankDiagMatrix& m, Index max_rank) {
  const Index n = m.dim();
  const Index k1 = m.pos_factors().cols();
  const Index k2 = m.neg_factors().cols();
  const Index k = k1 + k2;
  const Vector diag_real = m.diag().real();
  if (k == 0) return LowRankDiagMatrix::from_real(diag_real, Matrix(n, 0), Matrix(n, 0), m.rank_cap());

  CMatrix f(n, k);
  f << m.pos_factors(), m.neg_factors();
  Vector sign(k);
  sign.head(k1).setOnes();
  sign.tail(k2).setConstant(-1.0);

  // Re(F G F^T) = Fr G Fr^T - Fi G Fi^T.
  const bool has_imag = f.imag().cwiseAbs().maxCoeff() > 0.0;
  const Index cols = has_imag ? 2 * k : k;
  Matrix h(n, cols);
  Vector g(cols);
  h.leftCols(k) = f.real();
  g.head(k) = sign;
  if (has_imag) {
    h.rightCols(k) = f.imag();
    g.tail(k) = -sign;
  }

  Eigen::HouseholderQR<Matrix> qr(h);
  const Index r = std::min(n, cols);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, r);
  const Matrix rr = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  Matrix core = rr * g.asDiagonal() * rr.transpose();
  core = 0.5 * (core + core.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(core);
  const Vector& lam = eig.eigenvalues();
  const Matrix basis = q * eig.eigenvectors();

  const double scale = std::max(lam.cwiseAbs().maxCoeff(), diag_real.cwiseAbs().maxCoeff());
  const double drop = 1e-14 * scale;
  std::vector<Index> order(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return std::abs(lam(a)) > std::abs(lam(b)); });

  std::vector<Index> keep_pos, keep_neg;
  for (Index idx : order) {
    if (std::abs(lam(idx)) <= drop) break;
    if (static_cast<Index>(keep_pos.size() + keep_neg.size()) >= max_rank) break;
    (lam(idx) > 0 ? keep_pos : keep_neg).push_back(idx);
  }
  Matrix p(n, static_cast<Index>(keep_pos.size()));
  Matrix qn(n, static_cast<Index>(keep_neg.size()));
  for (std::size_t j = 0; j < keep_pos.size(); ++j) {
    p.col(static_cast<Index>(j)) = basis.col(keep_pos[j]) * std::sqrt(lam(keep_pos[j]));
  }
  for (std::size_t j = 0; j < keep_neg.size(); ++j) {
    qn.col(static_cast<Index>(j)) = basis.col(keep_neg[j]) * std::sqrt(-lam(keep_neg[j]));
  }
  return LowRankDiagMatrix::from_real(diag_real, p, qn, m.rank_cap());
}

/// Positive-definiteness through inertia: with B = [[D, F], [F^T, -G^-1]],
/// the Schur complements give pos(M) = pos(D) + pos(S) - q where
/// S = -G^-1 - F^T D^-1 F and q is the number of negative columns.
inline bool is_positive_definite(const LowRankDiagMatrix& m) {
  const LowRankDiagMatrix real = recompress(m, m.dim() + m.pos_factors().cols() + m.neg_factors().cols());
  const Vector d = real.diag().real();
  if ((d.array() == 0.0).any() || !d.allFinite()) return false;
  const Index n = d.size();
  const Index p = real.pos_factors().cols();
  const Index q = real.neg_factors().cols();
  const Index pos_d = (d.array() > 0.0).count();
  if (p + q == 0) return pos_d == n;

  Matrix f(n, p + q);
  f << real.pos_factors().real(), real.neg_factors().real();
  Matrix s = -(f.transpose() * d.cwiseInverse().asDiagonal() * f);
  s.diagonal().head(p).array() -= 1.0;
  s.diagonal().tail(q).array() += 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (s + s.transpose()));
  const Vector& lam = eig.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, lam.cwiseAbs().maxCoeff());
  if ((lam.array().abs() <= tol).any()) return false;
  const Index pos_s = (lam.array() > 0.0).count();
  return pos_d + pos_s - q == n;
}

inline bool is_positive_definite(const DenseSymMatrix& m) {
  Eigen::LLT<Matrix> llt(m.entries());
  return llt.info() == Eigen::Success;
}

inline bool is_positive_definite(const CovarianceBackend& m) {
  return std::visit([](const auto& x) { return is_positive_definite(x); }, m);
}

inline double smallest_eigenvalue(const DenseSymMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m.entries(), Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0);
}

// ---------------------------------------------------------------------------
// inversion

/// Double-Woodbury inverse without the positive-definiteness check; only
/// requires nonzero diagonal and nonsingular k x k inner systems.
inline LowRankDiagMatrix woodbury_inverse(const LowRankDiagMatrix& m) {
  const Index n = m.dim();
  if ((m.diag().array().abs() == 0.0).any()) {
    throw DomainError("invert: diagonal has zero entries");
  }
  const CVector dinv = m.diag().cwiseInverse();
  const CMatrix& u = m.pos_factors();
  const CMatrix& v = m.neg_factors();
  const Index k1 = u.cols();
  const Index k2 = v.cols();

  // (D + U U^T)^-1 = D^-1 - V' V'^T,  V' = D^-1 U sqrt(K),  K = (I + U^T D^-1 U)^-1
  CMatrix v_new(n, k1);
  if (k1 > 0) {
    const CMatrix du = dinv.asDiagonal() * u;
    const CMatrix inner = CMatrix::Identity(k1, k1) + u.transpose() * du;
    const CMatrix k = detail::checked_inverse(inner, "I + U^T D^-1 U");
    v_new = du * detail::symmetric_sqrt(0.5 * (k + k.transpose()));
  }

  // (A - V V^T)^-1 = A^-1 + U' U'^T,  U' = A^-1 V sqrt(L),  L = (I - V^T A^-1 V)^-1
  CMatrix u_new(n, k2);
  if (k2 > 0) {
    CMatrix ainv_v = dinv.asDiagonal() * v;
    if (k1 > 0) ainv_v -= v_new * (v_new.transpose() * v);
    const CMatrix inner = CMatrix::Identity(k2, k2) - v.transpose() * ainv_v;
    const CMatrix l = detail::checked_inverse(0.5 * (inner + inner.transpose()), "I - V^T A^-1 V");
    u_new = ainv_v * detail::symmetric_sqrt(0.5 * (l + l.transpose()));
  }
  return LowRankDiagMatrix(dinv, u_new, v_new, m.rank_cap());
}

inline LowRankDiagMatrix invert(const LowRankDiagMatrix& m) {
  if ((m.diag().array().abs() == 0.0).any()) {
    throw DomainError("invert: diagonal has zero entries");
  }
  if (!is_positive_definite(m)) {
    throw DomainError("invert: represented matrix is not positive definite");
  }
  return woodbury_inverse(m);
}

inline DenseSymMatrix invert(const DenseSymMatrix& m) {
  Eigen::LLT<Matrix> llt(m.entries());
  if (llt.info() != Eigen::Success) {
    throw DomainError("invert: dense matrix is not positive definite (smallest eigenvalue " +
                      std::to_string(smallest_eigenvalue(m)) + ")");
  }
  Matrix inv = llt.solve(Matrix::Identity(m.dim(), m.dim()));
  return DenseSymMatrix(0.5 * (inv + inv.transpose()));
}

inline CovarianceBackend invert(const CovarianceBackend& m) {
  return std::visit([](const auto& x) -> CovarianceBackend { return invert(x); }, m);
}

// ---------------------------------------------------------------------------
// updates

inline LowRankDiagMatrix add_scalar_diagonal(const LowRankDiagMatrix& m, double c) {
  if (c == 0.0) return m;
  CVector d = m.diag();
  d.array() += c;
  return LowRankDiagMatrix(std::move(d), m.pos_factors(), m.neg_factors(), m.rank_cap());
}

inline DenseSymMatrix add_scalar_diagonal(const DenseSymMatrix& m, double c) {
  if (c == 0.0) return m;
  Matrix e = m.entries();
  e.diagonal().array() += c;
  return DenseSymMatrix(std::move(e));
}

inline CovarianceBackend add_scalar_diagonal(const CovarianceBackend& m, double c) {
  return std::visit([c](const auto& x) -> CovarianceBackend { return add_scalar_diagonal(x, c); },
                    m);
}

/// M + plus plus^T - minus minus^T, appending one column to each factor.
inline LowRankDiagMatrix append_rank_one(const LowRankDiagMatrix& m, const Vector& plus,
                                         const Vector& minus) {
  detail::require_dim(m.dim(), plus.size(), "append_rank_one");
  detail::require_dim(m.dim(), minus.size(), "append_rank_one");
  if (!plus.allFinite() || !minus.allFinite()) {
    throw ContractViolation("append_rank_one: non-finite update vector");
  }
  const Index k1 = m.pos_factors().cols();
  const Index k2 = m.neg_factors().cols();
  if (k1 + 1 > m.rank_cap() || k2 + 1 > m.rank_cap()) {
    throw CapacityError("append_rank_one: rank cap " + std::to_string(m.rank_cap()) + " reached");
  }
  CMatrix u(m.dim(), k1 + 1);
  u << m.pos_factors(), plus.cast<std::complex<double>>();
  CMatrix v(m.dim(), k2 + 1);
  v << m.neg_factors(), minus.cast<std::complex<double>>();
  return LowRankDiagMatrix(m.diag(), std::move(u), std::move(v), m.rank_cap());
}

inline DenseSymMatrix append_rank_one(const DenseSymMatrix& m, const Vector& plus,
                                      const Vector& minus) {
  detail::require_dim(m.dim(), plus.size(), "append_rank_one");
  detail::require_dim(m.dim(), minus.size(), "append_rank_one");
  Matrix e = m.entries() + plus * plus.transpose() - minus * minus.transpose();
  return DenseSymMatrix(std::move(e));
}

inline CovarianceBackend append_rank_one(const CovarianceBackend& m, const Vector& plus,
                                         const Vector& minus) {
  return std::visit(
      [&](const auto& x) -> CovarianceBackend { return append_rank_one(x, plus, minus); }, m);
}

}  // namespace freehunch
