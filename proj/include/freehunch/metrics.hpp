#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "freehunch/errors.hpp"
#include "freehunch/matrix_core.hpp"
#include "freehunch/moments.hpp"

namespace freehunch {

/// Regular grid over a box; one (lo, hi, bins) triple per axis.
struct HistogramGrid {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<Index> bins;
  double epsilon = 1e-9;        // pseudo-probability added to every bin
  double min_coverage = 0.99;   // below this the estimate is flagged

  static HistogramGrid box(Index dims, double lo, double hi, Index bins) {
    HistogramGrid g;
    g.lo.assign(static_cast<std::size_t>(dims), lo);
    g.hi.assign(static_cast<std::size_t>(dims), hi);
    g.bins.assign(static_cast<std::size_t>(dims), bins);
    return g;
  }

  Index dims() const { return static_cast<Index>(bins.size()); }

  Index cells() const {
    Index c = 1;
    for (Index b : bins) c *= b;
    return c;
  }

  void validate() const {
    if (bins.empty() || lo.size() != bins.size() || hi.size() != bins.size()) {
      throw ContractViolation("HistogramGrid: lo, hi and bins must have one entry per axis");
    }
    for (std::size_t i = 0; i < bins.size(); ++i) {
      if (bins[i] < 1 || !(lo[i] < hi[i])) throw ContractViolation("HistogramGrid: empty axis");
    }
    if (!(epsilon >= 0.0)) throw ContractViolation("HistogramGrid: epsilon must be non-negative");
  }

  /// Flat cell index of a point, or -1 outside the box.
  Index locate(const Eigen::Ref<const Eigen::RowVectorXd>& p) const {
    Index flat = 0;
    for (std::size_t a = 0; a < bins.size(); ++a) {
      const double v = p(static_cast<Index>(a));
      if (!(v >= lo[a]) || !(v <= hi[a])) return -1;
      Index k = static_cast<Index>(std::floor((v - lo[a]) / (hi[a] - lo[a]) * static_cast<double>(bins[a])));
      k = std::min(k, bins[a] - 1);
      flat = flat * bins[a] + k;
    }
    return flat;
  }
};

struct Histogram {
  Vector probabilities;
  double coverage = 0.0;  // fraction of samples inside the box
};

inline Histogram histogram(const Matrix& samples, const HistogramGrid& grid) {
  grid.validate();
  if (samples.rows() == 0) throw ContractViolation("histogram: empty sample set");
  detail::require_dim(grid.dims(), samples.cols(), "histogram");
  Vector counts = Vector::Zero(grid.cells());
  Index inside = 0;
  for (Index r = 0; r < samples.rows(); ++r) {
    const Index c = grid.locate(samples.row(r));
    if (c >= 0) {
      counts(c) += 1.0;
      ++inside;
    }
  }
  Histogram h;
  h.coverage = static_cast<double>(inside) / static_cast<double>(samples.rows());
  const double total = static_cast<double>(std::max<Index>(inside, 1));
  h.probabilities = (counts / total).array() + grid.epsilon;
  h.probabilities /= h.probabilities.sum();
  return h;
}

struct JsdResult {
  double value = 0.0;
  double coverage_a = 0.0;
  double coverage_b = 0.0;
  bool coverage_ok = true;
};

/// Jensen-Shannon divergence in bits between two discrete distributions.
inline double jensen_shannon(const Vector& p, const Vector& q) {
  detail::require_dim(p.size(), q.size(), "jensen_shannon");
  auto term = [](double a, double m) { return a > 0.0 ? a * std::log2(a / m) : 0.0; };
  double sum = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p(i) + q(i));
    sum += term(p(i), m) + term(q(i), m);
  }
  return std::clamp(0.5 * sum, 0.0, 1.0);
}

inline JsdResult jensen_shannon(const Matrix& samples_a, const Matrix& samples_b, const HistogramGrid& grid) {
  const Histogram a = histogram(samples_a, grid);
  const Histogram b = histogram(samples_b, grid);
  JsdResult r;
  r.value = jensen_shannon(a.probabilities, b.probabilities);
  r.coverage_a = a.coverage;
  r.coverage_b = b.coverage;
  r.coverage_ok = a.coverage >= grid.min_coverage && b.coverage >= grid.min_coverage;
  return r;
}

inline double frobenius_error(const CovarianceBackend& estimate, const DenseSymMatrix& truth) {
  const DenseSymMatrix e = to_dense(estimate);
  detail::require_dim(truth.dim(), e.dim(), "frobenius_error");
  return (e.entries() - truth.entries()).norm();
}

inline double frobenius_error(const Covariance& estimate, const DenseSymMatrix& truth) {
  const DenseSymMatrix e = to_dense(estimate);
  detail::require_dim(truth.dim(), e.dim(), "frobenius_error");
  return (e.entries() - truth.entries()).norm();
}

/// Mean over coordinates of the per-coordinate sample standard deviation.
inline double mean_coordinate_std(const Matrix& samples) {
  if (samples.rows() < 2) throw InsufficientDataError("mean_coordinate_std: need at least 2 samples");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.colwise().squaredNorm() / static_cast<double>(samples.rows() - 1);
  return var.array().sqrt().mean();
}

}  // namespace freehunch
