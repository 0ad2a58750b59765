#pragma once

// Closed-form scores, denoiser moments and posteriors for Gaussian-mixture
// data under the variance-exploding forward process x_t = x_0 + sigma * eps.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "freehunch/errors.hpp"
#include "freehunch/matrix_core.hpp"
#include "freehunch/moments.hpp"
#include "freehunch/observation.hpp"
#include "freehunch/random.hpp"

namespace freehunch {

class GaussianMixture {
 public:
  GaussianMixture() = default;

  GaussianMixture(Vector weights, std::vector<Vector> means, std::vector<DenseSymMatrix> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
    const auto k = static_cast<std::size_t>(weights_.size());
    if (k == 0) throw ContractViolation("GaussianMixture: needs at least one component");
    if (means_.size() != k || covariances_.size() != k) {
      throw ContractViolation("GaussianMixture: weights, means and covariances differ in count");
    }
    if ((weights_.array() <= 0.0).any()) {
      throw ContractViolation("GaussianMixture: weights must be positive");
    }
    if (std::abs(weights_.sum() - 1.0) > 1e-12) {
      throw ContractViolation("GaussianMixture: weights must sum to 1");
    }
    const Index n = means_[0].size();
    if (n <= 0) throw ContractViolation("GaussianMixture: dimension must be positive");
    for (std::size_t i = 0; i < k; ++i) {
      detail::require_dim(n, means_[i].size(), "GaussianMixture mean");
      detail::require_dim(n, covariances_[i].dim(), "GaussianMixture covariance");
      if (!is_positive_definite(covariances_[i]) || smallest_eigenvalue(covariances_[i]) <= 0.0) {
        throw ContractViolation("GaussianMixture: component " + std::to_string(i) +
                                " covariance is not positive definite");
      }
    }
  }

  /// Single Gaussian N(mean, covariance).
  static GaussianMixture gaussian(Vector mean, DenseSymMatrix covariance) {
    return GaussianMixture(Vector::Ones(1), {std::move(mean)}, {std::move(covariance)});
  }

  Index dim() const { return means_.empty() ? 0 : means_[0].size(); }
  Index components() const { return weights_.size(); }
  const Vector& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<DenseSymMatrix>& covariances() const { return covariances_; }

  Vector mean() const {
    Vector m = Vector::Zero(dim());
    for (Index i = 0; i < components(); ++i) m += weights_(i) * means_[static_cast<std::size_t>(i)];
    return m;
  }

  /// Total covariance sum_i w_i (Sigma_i + mu_i mu_i^T) - m m^T.
  DenseSymMatrix covariance() const {
    const Vector m = mean();
    Matrix c = Matrix::Zero(dim(), dim());
    for (Index i = 0; i < components(); ++i) {
      const auto s = static_cast<std::size_t>(i);
      const Vector d = means_[s] - m;
      c += weights_(i) * (covariances_[s].entries() + d * d.transpose());
    }
    return DenseSymMatrix(0.5 * (c + c.transpose()));
  }

  /// n independent draws, one per row.
  Matrix sample(Rng& rng, Index n) const {
    std::vector<Matrix> chol;
    chol.reserve(means_.size());
    for (const auto& c : covariances_) chol.emplace_back(Eigen::LLT<Matrix>(c.entries()).matrixL());
    Matrix out(n, dim());
    for (Index r = 0; r < n; ++r) {
      const double u = uniform01(rng);
      Index comp = components() - 1;
      double acc = 0.0;
      for (Index i = 0; i < components(); ++i) {
        acc += weights_(i);
        if (u < acc) {
          comp = i;
          break;
        }
      }
      const auto s = static_cast<std::size_t>(comp);
      out.row(r) = (means_[s] + chol[s] * standard_normal(rng, dim())).transpose();
    }
    return out;
  }

 private:
  Vector weights_;
  std::vector<Vector> means_;
  std::vector<DenseSymMatrix> covariances_;
};

/// Linear noise schedule sigma(t) = t between sigma_min and sigma_max.
struct NoiseSchedule {
  double sigma_min = 0.002;
  double sigma_max = 20.0;

  NoiseSchedule() = default;
  NoiseSchedule(double lo, double hi) : sigma_min(lo), sigma_max(hi) {
    if (!(lo > 0.0) || !(hi > lo)) {
      throw ContractViolation("NoiseSchedule: need 0 < sigma_min < sigma_max");
    }
  }
  double sigma(double t) const { return t; }
  double sigma_dot(double /*t*/) const { return 1.0; }
};

namespace detail {

/// Per-call evaluation of every component of the sigma-smoothed mixture.
struct MixtureTerms {
  Vector responsibilities;           // posterior component weights given x_t
  std::vector<Vector> whitened;      // S_i^-1 (x - mu_i), S_i = Sigma_i + sigma^2 I
  std::vector<Matrix> precisions;    // S_i^-1, only when requested
  double log_density = 0.0;
};

inline MixtureTerms mixture_terms(const GaussianMixture& gmm, const Vector& x, double sigma,
                                  bool want_precisions) {
  require_dim(gmm.dim(), x.size(), "gaussian mixture oracle");
  if (!x.allFinite() || !std::isfinite(sigma)) {
    throw NumericalBreakdown("gaussian mixture oracle: non-finite input");
  }
  const Index n = gmm.dim();
  const Index k = gmm.components();
  const double s2 = sigma * sigma;
  MixtureTerms out;
  out.whitened.resize(static_cast<std::size_t>(k));
  if (want_precisions) out.precisions.resize(static_cast<std::size_t>(k));
  Vector logp(k);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (Index i = 0; i < k; ++i) {
    const auto s = static_cast<std::size_t>(i);
    Matrix cov = gmm.covariances()[s].entries();
    cov.diagonal().array() += s2;
    Eigen::LLT<Matrix> llt(cov);
    const Vector r = x - gmm.means()[s];
    const Vector z = llt.matrixL().solve(r);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    logp(i) = std::log(gmm.weights()(i)) - 0.5 * (static_cast<double>(n) * log2pi + logdet + z.squaredNorm());
    out.whitened[s] = llt.matrixU().solve(z);
    if (want_precisions) out.precisions[s] = llt.solve(Matrix::Identity(n, n));
  }
  const double top = logp.maxCoeff();
  const double sum = (logp.array() - top).exp().sum();
  out.log_density = top + std::log(sum);
  out.responsibilities = (logp.array() - out.log_density).exp();
  for (Index i = 0; i < k; ++i) {
    if (out.responsibilities(i) < 1e-300) out.responsibilities(i) = 0.0;
  }
  return out;
}

inline Vector score_from_terms(const MixtureTerms& t, Index n) {
  Vector score = Vector::Zero(n);
  for (std::size_t i = 0; i < t.whitened.size(); ++i) {
    const double r = t.responsibilities(static_cast<Index>(i));
    if (r != 0.0) score -= r * t.whitened[i];
  }
  return score;
}

}  // namespace detail

/// log p(x_t) of the mixture convolved with N(0, sigma^2 I); sigma = 0 gives
/// the raw mixture density.
inline double gmm_log_density(const GaussianMixture& gmm, const Vector& x, double sigma) {
  if (!(sigma >= 0.0)) throw ContractViolation("gmm_log_density: sigma must be >= 0");
  return detail::mixture_terms(gmm, x, sigma, false).log_density;
}

inline Vector gmm_score(const GaussianMixture& gmm, const Vector& x, double sigma) {
  if (!(sigma > 0.0)) throw ContractViolation("gmm_score: sigma must be > 0");
  const auto t = detail::mixture_terms(gmm, x, sigma, false);
  return detail::score_from_terms(t, gmm.dim());
}

/// Exact E[x0|x_t] and Cov[x0|x_t]. The mean is x + sigma^2 * score from the
/// same responsibilities, and the covariance is sigma^2 (sigma^2 H + I) with H
/// the Hessian of log p(x_t) written in closed form.
inline DenoiserMoments gmm_denoiser_moments(const GaussianMixture& gmm, const Vector& x, double sigma,
                                            Vector* score_out = nullptr) {
  if (!(sigma > 0.0)) throw ContractViolation("gmm_denoiser_moments: sigma must be > 0");
  const Index n = gmm.dim();
  const auto t = detail::mixture_terms(gmm, x, sigma, true);
  const double s2 = sigma * sigma;
  const Vector score = detail::score_from_terms(t, n);
  const Vector avg = -score;  // sum_i r_i S_i^-1 (x - mu_i)

  Matrix hess_part = Matrix::Zero(n, n);  // sum_i r_i (a_i a_i^T - S_i^-1) - avg avg^T
  for (std::size_t i = 0; i < t.whitened.size(); ++i) {
    const double r = t.responsibilities(static_cast<Index>(i));
    if (r == 0.0) continue;
    const Vector d = t.whitened[i] - avg;
    hess_part += r * (d * d.transpose() - t.precisions[i]);
  }
  Matrix cov = s2 * s2 * hess_part;
  cov.diagonal().array() += s2;
  DenoiserMoments m;
  m.mean = x + s2 * score;
  m.covariance = Covariance{DenseSymMatrix(0.5 * (cov + cov.transpose())), nullptr};
  m.sigma = sigma;
  m.location = x;
  if (score_out) *score_out = score;
  return m;
}

/// Exact p(x0 | y) for y = x0 + noise_std * eps; again a Gaussian mixture.
inline GaussianMixture gmm_posterior_given_y(const GaussianMixture& gmm, const LinearObservation& obs) {
  if (!obs.op.is_identity()) {
    throw UnsupportedOperatorError("gmm_posterior_given_y: only the identity operator is supported");
  }
  detail::require_dim(gmm.dim(), obs.y.size(), "gmm_posterior_given_y");
  if (!(obs.noise_std > 0.0)) {
    throw ContractViolation("gmm_posterior_given_y: noise_std must be > 0");
  }
  const Index n = gmm.dim();
  const Index k = gmm.components();
  const double vy = obs.noise_std * obs.noise_std;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Vector logw(k);
  std::vector<Vector> means;
  std::vector<DenseSymMatrix> covs;
  for (Index i = 0; i < k; ++i) {
    const auto s = static_cast<std::size_t>(i);
    const Matrix& sig = gmm.covariances()[s].entries();
    Matrix total = sig;
    total.diagonal().array() += vy;
    Eigen::LLT<Matrix> llt(total);
    const Vector r = obs.y - gmm.means()[s];
    const Vector z = llt.matrixL().solve(r);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    logw(i) = std::log(gmm.weights()(i)) - 0.5 * (static_cast<double>(n) * log2pi + logdet + z.squaredNorm());
    means.push_back(gmm.means()[s] + sig * llt.solve(r));
    Matrix post = sig - sig * llt.solve(sig);
    covs.emplace_back(0.5 * (post + post.transpose()));
  }
  const double top = logw.maxCoeff();
  Vector w = (logw.array() - top).exp();
  w /= w.sum();
  for (Index i = 0; i < k; ++i) {
    if (w(i) < 1e-300) w(i) = 1e-300;
  }
  w /= w.sum();
  return GaussianMixture(std::move(w), std::move(means), std::move(covs));
}

/// grad log p(x_t | y) = -(x_t - E[x0 | x_t, y]) / sigma^2, computed as the
/// score of the sigma-smoothed posterior mixture p(x0 | y).
inline Vector gmm_conditional_score(const GaussianMixture& gmm, const LinearObservation& obs,
                                    const Vector& x, double sigma) {
  if (!obs.op.is_identity()) {
    throw UnsupportedOperatorError("gmm_conditional_score: only the identity operator is supported");
  }
  return gmm_score(gmm_posterior_given_y(gmm, obs), x, sigma);
}

}  // namespace freehunch
