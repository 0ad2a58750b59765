#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "freehunch/errors.hpp"
#include "freehunch/matrix_core.hpp"

namespace freehunch {

/// Measurement operators A: R^N -> R^M.
struct IdentityOperator {
  Index n = 0;
};

/// Keeps the listed coordinates (in order).
struct MaskOperator {
  std::vector<Index> kept;
  Index n = 0;
};

struct DenseOperator {
  Matrix a;
};

/// Zero-padded "same" 1-D convolution with an odd-length kernel.
struct Convolution1DOperator {
  Vector kernel;
  Index n = 0;
};

class LinearOperator {
 public:
  using Kind = std::variant<IdentityOperator, MaskOperator, DenseOperator, Convolution1DOperator>;

  LinearOperator() = default;
  LinearOperator(Kind kind) : kind_(std::move(kind)) { validate(); }  // NOLINT

  static LinearOperator identity(Index n) { return LinearOperator(IdentityOperator{n}); }
  static LinearOperator dense(Matrix a) { return LinearOperator(DenseOperator{std::move(a)}); }
  static LinearOperator mask(std::vector<Index> kept, Index n) {
    return LinearOperator(MaskOperator{std::move(kept), n});
  }
  static LinearOperator convolution(Vector kernel, Index n) {
    return LinearOperator(Convolution1DOperator{std::move(kernel), n});
  }

  const Kind& kind() const { return kind_; }
  bool is_identity() const { return std::holds_alternative<IdentityOperator>(kind_); }

  Index rows() const {
    return std::visit(
        [](const auto& op) -> Index {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, IdentityOperator>) return op.n;
          else if constexpr (std::is_same_v<T, MaskOperator>) return static_cast<Index>(op.kept.size());
          else if constexpr (std::is_same_v<T, DenseOperator>) return op.a.rows();
          else return op.n;
        },
        kind_);
  }

  Index cols() const {
    return std::visit(
        [](const auto& op) -> Index {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, DenseOperator>) return op.a.cols();
          else return op.n;
        },
        kind_);
  }

  Vector apply(const Vector& x) const {
    detail::require_dim(cols(), x.size(), "LinearOperator::apply");
    return std::visit(
        [&](const auto& op) -> Vector {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, IdentityOperator>) {
            return x;
          } else if constexpr (std::is_same_v<T, MaskOperator>) {
            Vector out(static_cast<Index>(op.kept.size()));
            for (std::size_t i = 0; i < op.kept.size(); ++i) out(static_cast<Index>(i)) = x(op.kept[i]);
            return out;
          } else if constexpr (std::is_same_v<T, DenseOperator>) {
            return op.a * x;
          } else {
            return convolve(op, x, false);
          }
        },
        kind_);
  }

  Vector apply_transpose(const Vector& y) const {
    detail::require_dim(rows(), y.size(), "LinearOperator::apply_transpose");
    return std::visit(
        [&](const auto& op) -> Vector {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, IdentityOperator>) {
            return y;
          } else if constexpr (std::is_same_v<T, MaskOperator>) {
            Vector out = Vector::Zero(op.n);
            for (std::size_t i = 0; i < op.kept.size(); ++i) out(op.kept[i]) += y(static_cast<Index>(i));
            return out;
          } else if constexpr (std::is_same_v<T, DenseOperator>) {
            return op.a.transpose() * y;
          } else {
            return convolve(op, y, true);
          }
        },
        kind_);
  }

  /// Dense matrix of A (for tests and small problems).
  Matrix to_dense() const {
    Matrix out(rows(), cols());
    for (Index j = 0; j < cols(); ++j) out.col(j) = this->apply(Vector::Unit(cols(), j));
    return out;
  }

 private:
  static Vector convolve(const Convolution1DOperator& op, const Vector& x, bool transpose) {
    const Index half = op.kernel.size() / 2;
    Vector out = Vector::Zero(op.n);
    for (Index i = 0; i < op.n; ++i) {
      double acc = 0.0;
      for (Index j = 0; j < op.kernel.size(); ++j) {
        // forward: out_i = sum_j k_j x_{i + j - half}; transpose flips the offset
        const Index src = transpose ? i - (j - half) : i + (j - half);
        if (src >= 0 && src < op.n) acc += op.kernel(j) * x(src);
      }
      out(i) = acc;
    }
    return out;
  }

  void validate() const {
    std::visit(
        [](const auto& op) {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, MaskOperator>) {
            for (Index k : op.kept) {
              if (k < 0 || k >= op.n) throw ContractViolation("MaskOperator: index out of range");
            }
          } else if constexpr (std::is_same_v<T, Convolution1DOperator>) {
            if (op.kernel.size() % 2 == 0) {
              throw ContractViolation("Convolution1DOperator: kernel length must be odd");
            }
          }
        },
        kind_);
  }

  Kind kind_ = IdentityOperator{};
};

/// y = A x0 + noise_std * eps.
struct LinearObservation {
  LinearOperator op;
  Vector y;
  double noise_std = 1.0;

  LinearObservation() = default;
  LinearObservation(LinearOperator op_, Vector y_, double noise_std_)
      : op(std::move(op_)), y(std::move(y_)), noise_std(noise_std_) {
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
      throw ContractViolation("LinearObservation: noise_std must be finite and non-negative");
    }
    detail::require_dim(op.rows(), y.size(), "LinearObservation");
  }
};

}  // namespace freehunch
