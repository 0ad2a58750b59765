#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>

#include "freehunch/errors.hpp"

namespace freehunch {

/// Orthonormal DCT-II matrix B of size n x n, coefficients c = B x.
inline Eigen::MatrixXd dct_matrix(Eigen::Index n) {
  Eigen::MatrixXd b(n, n);
  const double a0 = std::sqrt(1.0 / static_cast<double>(n));
  const double ak = std::sqrt(2.0 / static_cast<double>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      b(k, i) = (k == 0 ? a0 : ak) *
                std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) *
                         static_cast<double>(k) / (2.0 * static_cast<double>(n)));
    }
  }
  return b;
}

/// Orthonormal DCT-II over a 1-D signal of length L or a row-major H x W grid
/// (applied separably). Direct basis multiplication, O(L^2) per transform.
class DctPlan {
 public:
  explicit DctPlan(Eigen::Index length) : rows_(1), cols_(length), basis_cols_(dct_matrix(length)) {
    if (length <= 0) throw ContractViolation("DctPlan: length must be positive");
  }

  DctPlan(Eigen::Index height, Eigen::Index width)
      : rows_(height), cols_(width), basis_cols_(dct_matrix(width)) {
    if (height <= 0 || width <= 0) throw ContractViolation("DctPlan: shape must be positive");
    if (height > 1) basis_rows_ = dct_matrix(height);
  }

  Eigen::Index size() const { return rows_ * cols_; }
  Eigen::Index height() const { return rows_; }
  Eigen::Index width() const { return cols_; }
  bool is_2d() const { return rows_ > 1; }

  Eigen::VectorXd forward(const Eigen::VectorXd& signal) const {
    check(signal.size(), "dct_forward");
    if (!is_2d()) return basis_cols_ * signal;
    // signal is a row-major H x W grid; C = B_H X B_W^T.
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
        signal.data(), rows_, cols_);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> c =
        basis_rows_ * x * basis_cols_.transpose();
    return Eigen::Map<const Eigen::VectorXd>(c.data(), c.size());
  }

  Eigen::VectorXd inverse(const Eigen::VectorXd& coefficients) const {
    check(coefficients.size(), "dct_inverse");
    if (!is_2d()) return basis_cols_.transpose() * coefficients;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> c(
        coefficients.data(), rows_, cols_);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x =
        basis_rows_.transpose() * c * basis_cols_;
    return Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  }

 private:
  void check(Eigen::Index got, const char* where) const {
    if (got != size()) {
      throw ContractViolation(std::string(where) + ": shape mismatch (plan size " +
                              std::to_string(size()) + ", got " + std::to_string(got) + ")");
    }
  }

  Eigen::Index rows_;
  Eigen::Index cols_;
  Eigen::MatrixXd basis_cols_;
  Eigen::MatrixXd basis_rows_;
};

inline Eigen::VectorXd dct_forward(const DctPlan& plan, const Eigen::VectorXd& signal) {
  return plan.forward(signal);
}

inline Eigen::VectorXd dct_inverse(const DctPlan& plan, const Eigen::VectorXd& coefficients) {
  return plan.inverse(coefficients);
}

}  // namespace freehunch
