#pragma once

// Denoiser-covariance tracking across a sampling trajectory: initialization,
// transport to a new noise level (time update) and BFGS refinement from
// consecutive denoiser means (space update).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "freehunch/dct.hpp"
#include "freehunch/errors.hpp"
#include "freehunch/matrix_core.hpp"
#include "freehunch/moments.hpp"

namespace freehunch {

enum class BackendChoice { Auto, Dense, LowRank };

/// Auto picks the dense backend up to this dimension.
inline constexpr Index kDenseAutoLimit = 64;

enum class InitKind { Identity, DataCovariance, DctDiagonal };

struct InitStrategy {
  InitKind kind = InitKind::Identity;
  double scale = 1.0;
  Matrix samples;  // one sample per row
  Index height = 1;
  Index width = 0;
  double variance_floor = 0.0;  // added to every DCT variance

  static InitStrategy identity(double scale = 1.0) {
    InitStrategy s;
    s.scale = scale;
    return s;
  }
  static InitStrategy data_covariance(Matrix samples) {
    InitStrategy s;
    s.kind = InitKind::DataCovariance;
    s.samples = std::move(samples);
    return s;
  }
  static InitStrategy dct_diagonal(Matrix samples, Index height, Index width, double floor = 0.0) {
    InitStrategy s;
    s.kind = InitKind::DctDiagonal;
    s.samples = std::move(samples);
    s.height = height;
    s.width = width;
    s.variance_floor = floor;
    return s;
  }
};

namespace detail {

inline bool use_dense(BackendChoice b, Index n) {
  return b == BackendChoice::Dense || (b == BackendChoice::Auto && n <= kDenseAutoLimit);
}

/// Unbiased sample covariance of the rows of `samples`.
inline Matrix sample_covariance(const Matrix& samples) {
  const Vector mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean.transpose();
  return centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
}

}  // namespace detail

inline Covariance initialize(const InitStrategy& strategy, Index dim,
                             BackendChoice backend = BackendChoice::Auto,
                             Index rank_cap = kDefaultRankCap) {
  if (dim <= 0) throw ContractViolation("initialize: dimension must be positive");
  switch (strategy.kind) {
    case InitKind::Identity: {
      if (!(strategy.scale > 0.0)) throw ContractViolation("initialize: identity scale must be positive");
      if (detail::use_dense(backend, dim)) return Covariance{DenseSymMatrix::identity(dim, strategy.scale), nullptr};
      return Covariance{LowRankDiagMatrix::identity(dim, strategy.scale, rank_cap), nullptr};
    }
    case InitKind::DataCovariance: {
      detail::require_dim(dim, strategy.samples.cols(), "initialize(DataCovariance)");
      if (strategy.samples.rows() < 2) {
        throw InsufficientDataError("initialize: data covariance needs at least 2 samples");
      }
      const Matrix c = detail::sample_covariance(strategy.samples);
      return Covariance{DenseSymMatrix(0.5 * (c + c.transpose())), nullptr};
    }
    case InitKind::DctDiagonal: {
      detail::require_dim(dim, strategy.samples.cols(), "initialize(DctDiagonal)");
      if (strategy.samples.rows() < 2) {
        throw InsufficientDataError("initialize: DCT-diagonal covariance needs at least 2 samples");
      }
      const Index width = strategy.width > 0 ? strategy.width : dim / std::max<Index>(strategy.height, 1);
      if (strategy.height * width != dim) {
        throw ContractViolation("initialize: signal shape " + std::to_string(strategy.height) + "x" +
                                std::to_string(width) + " does not match dimension " +
                                std::to_string(dim));
      }
      auto plan = strategy.height > 1 ? std::make_shared<const DctPlan>(strategy.height, width)
                                      : std::make_shared<const DctPlan>(width);
      Matrix coeffs(strategy.samples.rows(), dim);
      for (Index r = 0; r < strategy.samples.rows(); ++r) {
        coeffs.row(r) = plan->forward(strategy.samples.row(r).transpose()).transpose();
      }
      const Vector mean = coeffs.colwise().mean();
      const Matrix centered = coeffs.rowwise() - mean.transpose();
      Vector var = centered.colwise().squaredNorm().transpose() / static_cast<double>(coeffs.rows() - 1);
      var.array() += strategy.variance_floor;
      return Covariance{LowRankDiagMatrix::from_real(var, Matrix(dim, 0), Matrix(dim, 0), rank_cap),
                        std::move(plan)};
    }
  }
  throw ContractViolation("initialize: unknown strategy");
}

// ---------------------------------------------------------------------------
// time update

namespace detail {

[[noreturn]] inline void time_update_failure(double bound, double from, double to) {
  throw TimeUpdateDomainError("time_update: covariance is not positive definite after moving sigma " +
                                  std::to_string(from) + " -> " + std::to_string(to) +
                                  " (smallest precision eigenvalue " + std::to_string(bound) + ")",
                              bound);
}

inline CovarianceBackend time_update_matrix(const CovarianceBackend& m, double from, double to) {
  const double c = 1.0 / (to * to) - 1.0 / (from * from);
  if (c == 0.0) return m;
  if (const auto* dense = std::get_if<DenseSymMatrix>(&m)) {
    const DenseSymMatrix precision = add_scalar_diagonal(invert(*dense), c);
    if (!is_positive_definite(precision)) time_update_failure(smallest_eigenvalue(precision), from, to);
    return invert(precision);
  }
  const auto& lr = std::get<LowRankDiagMatrix>(m);
  const LowRankDiagMatrix precision = add_scalar_diagonal(invert(lr), c);
  if (!is_positive_definite(precision)) {
    double bound = std::numeric_limits<double>::quiet_NaN();
    if (precision.dim() <= kDenseAutoLimit) bound = smallest_eigenvalue(to_dense(precision));
    time_update_failure(bound, from, to);
  }
  return woodbury_inverse(precision);
}

/// (s I - c M)^-1 v in the working coordinates of M.
inline Vector shifted_solve(const CovarianceBackend& m, double s, double c, const Vector& v) {
  if (const auto* dense = std::get_if<DenseSymMatrix>(&m)) {
    Matrix a = -c * dense->entries();
    a.diagonal().array() += s;
    Eigen::PartialPivLU<Matrix> lu(a);
    if (!(lu.rcond() > 1e-14)) {
      throw NumericalRankError("time_update: mean-transfer matrix is numerically singular");
    }
    return lu.solve(v);
  }
  const auto& lr = std::get<LowRankDiagMatrix>(m);
  // s I - c (D + U U^T - V V^T): the sign of c decides which factor set is added.
  const double root = std::sqrt(std::abs(c));
  CVector d = -c * lr.diag();
  d.array() += s;
  const CMatrix u = root * lr.pos_factors();
  const CMatrix w = root * lr.neg_factors();
  const LowRankDiagMatrix shifted = c > 0.0 ? LowRankDiagMatrix(d, w, u, lr.rank_cap())
                                            : LowRankDiagMatrix(d, u, w, lr.rank_cap());
  return freehunch::apply(woodbury_inverse(shifted), v);
}

}  // namespace detail

/// Transfers denoiser moments from m.sigma to sigma_next at the same
/// location. The covariance moves through its inverse; the mean uses the
/// covariance at the old level.
inline DenoiserMoments time_update(const DenoiserMoments& m, double sigma_next) {
  if (!(sigma_next > 0.0) || !std::isfinite(sigma_next)) {
    throw ContractViolation("time_update: sigma_next must be positive and finite");
  }
  if (!(m.sigma > 0.0)) throw ContractViolation("time_update: moments sigma must be positive");
  DenoiserMoments out;
  out.sigma = sigma_next;
  out.location = m.location;
  out.covariance = Covariance{detail::time_update_matrix(m.covariance.matrix, m.sigma, sigma_next),
                              m.covariance.basis};
  if (m.mean.size() == 0 || sigma_next == m.sigma) {
    out.mean = m.mean;
    return out;
  }
  const double s2 = sigma_next * sigma_next;
  const double c = (s2 - m.sigma * m.sigma) / (m.sigma * m.sigma);
  const Vector r = m.covariance.to_working(m.mean - m.location);
  const Vector step = detail::shifted_solve(m.covariance.matrix, s2, c, r);
  out.mean = m.location + s2 * m.covariance.from_working(step);
  return out;
}

// ---------------------------------------------------------------------------
// space update

struct TrackerConfig {
  double space_lo = 1.0;
  double space_hi = 5.0;
  double curvature_tolerance = 1e-8;
  double init_sigma = 20.0;
  bool space_updates = true;
  BackendChoice backend = BackendChoice::Auto;
  Index rank_cap = kDefaultRankCap;
};

enum class SpaceOutcome { NotAttempted, Accepted, SkippedCurvature, SkippedRange, SkippedZeroStep, Disabled };

inline const char* to_string(SpaceOutcome o) {
  switch (o) {
    case SpaceOutcome::NotAttempted: return "not_attempted";
    case SpaceOutcome::Accepted: return "accepted";
    case SpaceOutcome::SkippedCurvature: return "skipped_curvature";
    case SpaceOutcome::SkippedRange: return "skipped_range";
    case SpaceOutcome::SkippedZeroStep: return "skipped_zero_step";
    case SpaceOutcome::Disabled: return "disabled";
  }
  return "unknown";
}

struct SpaceUpdateResult {
  Covariance covariance;
  SpaceOutcome outcome = SpaceOutcome::NotAttempted;
};

/// BFGS update of the covariance from the secant pair (dx, de), both in data
/// coordinates: S' = S - S dx dx^T S / (dx^T S dx) + de de^T / (de^T dx).
inline SpaceUpdateResult bfgs_update(const Covariance& cov, const Vector& dx, const Vector& de,
                                     double curvature_tolerance) {
  detail::require_dim(cov.dim(), dx.size(), "bfgs_update");
  detail::require_dim(cov.dim(), de.size(), "bfgs_update");
  if (!dx.allFinite() || !de.allFinite()) throw NumericalBreakdown("bfgs_update: non-finite secant pair");
  const Vector x = cov.to_working(dx);
  const Vector e = cov.to_working(de);
  const double xn = x.norm();
  if (xn == 0.0) return {cov, SpaceOutcome::SkippedZeroStep};
  const double curvature = e.dot(x);
  if (!(curvature > curvature_tolerance * e.norm() * xn)) return {cov, SpaceOutcome::SkippedCurvature};
  // At the rank cap the update is applied to the truncated matrix, so the
  // secant condition holds for what is actually stored.
  CovarianceBackend base = cov.matrix;
  if (const auto* lr = std::get_if<LowRankDiagMatrix>(&base)) {
    if (lr->pos_factors().cols() >= lr->rank_cap() || lr->neg_factors().cols() >= lr->rank_cap()) {
      base = recompress(*lr, lr->rank_cap() - 1);
    }
  }
  const Vector sx = freehunch::apply(base, x);
  const double q = x.dot(sx);
  if (!(q > 0.0)) return {cov, SpaceOutcome::SkippedCurvature};
  const Vector plus = e / std::sqrt(curvature);
  const Vector minus = sx / std::sqrt(q);
  CovarianceBackend next = append_rank_one(base, plus, minus);
  return {Covariance{std::move(next), cov.basis}, SpaceOutcome::Accepted};
}

/// The inverse-covariance form of the same update on a dense precision P:
/// P' = (I - g dx de^T) P (I - g de dx^T) + g dx dx^T, g = 1 / (de^T dx).
inline DenseSymMatrix bfgs_inverse_update(const DenseSymMatrix& precision, const Vector& dx,
                                          const Vector& de) {
  detail::require_dim(precision.dim(), dx.size(), "bfgs_inverse_update");
  detail::require_dim(precision.dim(), de.size(), "bfgs_inverse_update");
  const double curvature = de.dot(dx);
  if (!(curvature > 0.0)) throw DomainError("bfgs_inverse_update: curvature de^T dx must be positive");
  const double g = 1.0 / curvature;
  const Index n = precision.dim();
  const Matrix left = Matrix::Identity(n, n) - g * dx * de.transpose();
  Matrix p = left * precision.entries() * left.transpose() + g * dx * dx.transpose();
  return DenseSymMatrix(0.5 * (p + p.transpose()));
}

// ---------------------------------------------------------------------------
// state machine

struct TrackerState {
  Covariance covariance;
  double covariance_sigma = 0.0;  // level the covariance is valid at
  std::optional<Vector> prev_mean;
  std::optional<Vector> prev_location;
  std::optional<double> prev_sigma;
  TrackerConfig config;
  Index accepted = 0;
  Index skipped = 0;
};

inline TrackerState make_tracker(Covariance initial, const TrackerConfig& config = {}) {
  if (!(config.init_sigma > 0.0)) throw ContractViolation("make_tracker: init_sigma must be positive");
  if (!(config.space_lo <= config.space_hi)) {
    throw ContractViolation("make_tracker: space update range is empty");
  }
  if (!(config.curvature_tolerance >= 0.0)) {
    throw ContractViolation("make_tracker: curvature_tolerance must be non-negative");
  }
  TrackerState s;
  s.covariance = std::move(initial);
  s.covariance_sigma = config.init_sigma;
  s.config = config;
  return s;
}

inline TrackerState make_tracker(const InitStrategy& strategy, Index dim, const TrackerConfig& config = {}) {
  return make_tracker(initialize(strategy, dim, config.backend, config.rank_cap), config);
}

/// Space update of the state's covariance from (x_new, mu_new) against the
/// previous location and the previous mean transferred to `sigma`.
inline std::pair<TrackerState, SpaceOutcome> space_update(const TrackerState& state, const Vector& x_new,
                                                          const Vector& mu_new, double sigma,
                                                          const Vector& mu_transferred) {
  if (!state.prev_location) throw ContractViolation("space_update: no previous location");
  if (sigma != state.covariance_sigma) {
    throw ContractViolation("space_update: sigma differs from the covariance level");
  }
  TrackerState next = state;
  SpaceOutcome outcome;
  if (!state.config.space_updates) {
    outcome = SpaceOutcome::Disabled;
  } else if (sigma < state.config.space_lo || sigma > state.config.space_hi) {
    outcome = SpaceOutcome::SkippedRange;
  } else {
    const Vector dx = x_new - *state.prev_location;
    const Vector de = sigma * sigma * (mu_new - mu_transferred);
    auto r = bfgs_update(state.covariance, dx, de, state.config.curvature_tolerance);
    next.covariance = std::move(r.covariance);
    outcome = r.outcome;
  }
  if (outcome == SpaceOutcome::Accepted) ++next.accepted;
  else if (outcome != SpaceOutcome::Disabled) ++next.skipped;
  return {std::move(next), outcome};
}

struct ProcessResult {
  TrackerState state;
  DenoiserMoments moments;
  SpaceOutcome outcome = SpaceOutcome::NotAttempted;
};

/// Feeds one denoiser evaluation (mu_new at x_new, sigma_new) to the tracker.
/// `exact_transfer`, when given, replaces the time-updated previous mean by
/// an explicit evaluation of the denoiser at (prev_location, sigma_new).
inline ProcessResult process_denoiser(const TrackerState& state, const Vector& mu_new, const Vector& x_new,
                                      double sigma_new,
                                      const std::optional<Vector>& exact_transfer = std::nullopt) {
  detail::require_dim(state.covariance.dim(), mu_new.size(), "process_denoiser");
  detail::require_dim(state.covariance.dim(), x_new.size(), "process_denoiser");
  if (!(sigma_new > 0.0)) throw ContractViolation("process_denoiser: sigma must be positive");
  ProcessResult out;
  if (!state.prev_mean) {
    out.state = state;
    out.state.covariance.matrix =
        detail::time_update_matrix(state.covariance.matrix, state.covariance_sigma, sigma_new);
    out.state.covariance_sigma = sigma_new;
  } else {
    DenoiserMoments prev{*state.prev_mean, state.covariance, state.covariance_sigma, *state.prev_location};
    DenoiserMoments moved = time_update(prev, sigma_new);
    TrackerState staged = state;
    staged.covariance = std::move(moved.covariance);
    staged.covariance_sigma = sigma_new;
    const Vector& transferred = exact_transfer ? *exact_transfer : moved.mean;
    auto [updated, outcome] = space_update(staged, x_new, mu_new, sigma_new, transferred);
    out.state = std::move(updated);
    out.outcome = outcome;
  }
  out.state.prev_mean = mu_new;
  out.state.prev_location = x_new;
  out.state.prev_sigma = sigma_new;
  out.moments = DenoiserMoments{mu_new, out.state.covariance, sigma_new, x_new};
  return out;
}

}  // namespace freehunch
