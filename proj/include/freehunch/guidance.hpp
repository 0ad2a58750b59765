#pragma once

// Reconstruction guidance for y = A x0 + sigma_y * eps under a Gaussian
// approximation N(mu, Sigma) of p(x0 | x_t):
//
//     g = J A^T (A Sigma A^T + sigma_y^2 I)^-1 (y - A mu),   J ~ d mu / d x_t
//
// plus the diagonal-covariance baselines built from the same formula.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "freehunch/errors.hpp"
#include "freehunch/matrix_core.hpp"
#include "freehunch/moments.hpp"
#include "freehunch/observation.hpp"

namespace freehunch {

struct CgSettings {
  double rtol_max = 1.0;
  double rtol_min = 1e-14;
  double sigma_lo = 1.0;
  double sigma_hi = 80.0;
  double p = 0.1;
  Index max_iterations = 1000;
  bool direct = false;  // dense Cholesky instead of CG (small problems)

  void validate() const {
    if (!(rtol_min > 0.0) || !(rtol_min <= rtol_max)) {
      throw ContractViolation("CgSettings: need 0 < rtol_min <= rtol_max");
    }
    if (!(sigma_lo > 0.0) || !(sigma_lo < sigma_hi)) {
      throw ContractViolation("CgSettings: need 0 < sigma_lo < sigma_hi");
    }
    if (!(p > 0.0)) throw ContractViolation("CgSettings: p must be positive");
    if (max_iterations < 1) throw ContractViolation("CgSettings: max_iterations must be >= 1");
  }

  /// Same tolerance at every noise level.
  static CgSettings constant(double rtol) {
    CgSettings s;
    s.rtol_max = rtol;
    s.rtol_min = rtol;
    return s;
  }
};

/// Tolerance schedule: loose at high noise, tight at low noise, interpolated
/// in log10 space with shape exponent p.
inline double rtol_for_sigma(const CgSettings& s, double sigma) {
  const double clipped = std::clamp(sigma, s.sigma_lo, s.sigma_hi);
  const double frac = (std::log10(clipped) - std::log10(s.sigma_lo)) /
                      (std::log10(s.sigma_hi) - std::log10(s.sigma_lo));
  const double log_factor = std::pow(frac, s.p);
  const double log_rtol =
      log_factor * (std::log10(s.rtol_max) - std::log10(s.rtol_min)) + std::log10(s.rtol_min);
  return std::pow(10.0, log_rtol);
}

struct CgResult {
  Vector x;
  Index iterations = 0;
  double residual_norm = 0.0;  // true residual ||b - A x||
  bool converged = false;
};

using LinearMap = std::function<Vector(const Vector&)>;

/// Jacobi-preconditioned conjugate gradients. Convergence is declared on the
/// true residual; if the recurrence drifts, the iteration restarts from it.
inline CgResult cg_solve(const LinearMap& op, const Vector& b, double rtol, Index max_iterations,
                         const Vector& precond_diag = Vector()) {
  if (!b.allFinite()) throw NumericalBreakdown("cg_solve: non-finite right-hand side");
  const Index n = b.size();
  Vector inv_diag = Vector::Ones(n);
  if (precond_diag.size() == n) {
    for (Index i = 0; i < n; ++i) inv_diag(i) = precond_diag(i) > 0.0 ? 1.0 / precond_diag(i) : 1.0;
  }
  CgResult out;
  out.x = Vector::Zero(n);
  const double bnorm = b.norm();
  const double target = rtol * bnorm;
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  Vector r = b;
  Vector z = inv_diag.cwiseProduct(r);
  Vector p = z;
  double rz = r.dot(z);
  Vector best = out.x;
  double best_res = bnorm;
  while (out.iterations < max_iterations) {
    const Vector ap = op(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap)) throw NumericalBreakdown("cg_solve: non-finite iterate");
    if (!(pap > 0.0)) {
      if (pap == 0.0 && r.norm() <= target) break;
      throw DomainError("cg_solve: operator is not positive definite (p^T A p = " + std::to_string(pap) + ")");
    }
    const double alpha = rz / pap;
    out.x += alpha * p;
    r -= alpha * ap;
    ++out.iterations;
    if (!out.x.allFinite()) throw NumericalBreakdown("cg_solve: non-finite iterate");
    if (r.norm() <= target) {
      const Vector true_r = b - op(out.x);
      const double tn = true_r.norm();
      if (tn < best_res) {
        best_res = tn;
        best = out.x;
      }
      if (tn <= target) break;
      r = true_r;  // restart from the true residual
      z = inv_diag.cwiseProduct(r);
      p = z;
      rz = r.dot(z);
      continue;
    }
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  const double final_res = (b - op(out.x)).norm();
  if (final_res > best_res) {
    out.x = best;
    out.residual_norm = best_res;
  } else {
    out.residual_norm = final_res;
  }
  out.converged = out.residual_norm <= target;
  return out;
}

// ---------------------------------------------------------------------------

enum class JacobianStrategy { ExactOracle, CovarianceApprox, Identity };

struct GuidanceResult {
  Vector gradient;
  Index cg_iterations = 0;
  double cg_residual = 0.0;
  double cg_rtol = 0.0;
  bool converged = true;
  bool fallback_used = false;
};

namespace detail {

inline double max_abs(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// diag(A S A^T) for a covariance given by its action and diagonal.
inline Vector projected_diagonal(const LinearOperator& a, const LinearMap& sigma_apply, const Vector& sigma_diag) {
  if (a.is_identity()) return sigma_diag;
  if (const auto* m = std::get_if<MaskOperator>(&a.kind())) {
    Vector d(static_cast<Index>(m->kept.size()));
    for (std::size_t i = 0; i < m->kept.size(); ++i) d(static_cast<Index>(i)) = sigma_diag(m->kept[i]);
    return d;
  }
  Vector d(a.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    const Vector row = a.apply_transpose(Vector::Unit(a.rows(), i));
    d(i) = row.dot(sigma_apply(row));
  }
  return d;
}

/// z = (A S A^T + sigma_y^2 I)^-1 (y - A mu).
inline CgResult solve_innovation(const LinearObservation& obs, const LinearMap& sigma_apply,
                                 const Vector& sigma_diag, const Vector& residual, double rtol,
                                 const CgSettings& cg) {
  const double vy = obs.noise_std * obs.noise_std;
  const bool identity = obs.op.is_identity();
  const LinearMap op = [&](const Vector& v) {
    Vector out = identity ? sigma_apply(v) : obs.op.apply(sigma_apply(obs.op.apply_transpose(v)));
    if (vy != 0.0) out += vy * v;
    return out;
  };
  if (cg.direct) {
    const Index m = obs.op.rows();
    Matrix dense(m, m);
    for (Index j = 0; j < m; ++j) dense.col(j) = op(Vector::Unit(m, j));
    dense = 0.5 * (dense + dense.transpose()).eval();
    Eigen::LLT<Matrix> llt(dense);
    if (llt.info() != Eigen::Success) {
      throw DomainError("guidance: A Sigma A^T + sigma_y^2 I is not positive definite");
    }
    CgResult r;
    r.x = llt.solve(residual);
    r.residual_norm = (residual - op(r.x)).norm();
    r.converged = true;
    return r;
  }
  Vector pre = projected_diagonal(obs.op, sigma_apply, sigma_diag);
  pre.array() += vy;
  return cg_solve(op, residual, rtol, cg.max_iterations, pre);
}

}  // namespace detail

/// Everything the guidance rules may need at one (x_t, sigma).
struct GuidanceInputs {
  const DenoiserMoments* moments = nullptr;       // mean, sigma and (tracked) covariance
  const Covariance* exact_covariance = nullptr;   // Cov[x0 | x_t], for the exact Jacobian
};

struct GuidanceOptions {
  JacobianStrategy jacobian = JacobianStrategy::CovarianceApprox;
  bool fallback = true;
  CgSettings cg;
};

inline Vector apply_jacobian(JacobianStrategy jac, const GuidanceInputs& in, const Covariance& sigma_cov,
                             const Vector& v) {
  const double s2 = in.moments->sigma * in.moments->sigma;
  switch (jac) {
    case JacobianStrategy::ExactOracle:
      if (!in.exact_covariance) {
        throw ContractViolation("guidance: exact Jacobian requested without an exact covariance");
      }
      return freehunch::apply(*in.exact_covariance, v) / s2;
    case JacobianStrategy::CovarianceApprox:
      return freehunch::apply(sigma_cov, v) / s2;
    case JacobianStrategy::Identity:
      return v;
  }
  return v;
}

/// Guidance with an explicit covariance in the innovation solve. With the
/// exact Jacobian, an estimate whose sigma^2-scaled max-abs entry exceeds 1
/// is replaced by the Sigma / sigma^2 form when that one is smaller.
inline GuidanceResult reconstruction_guidance(const GuidanceInputs& in, const LinearObservation& obs,
                                              const GuidanceOptions& opt) {
  if (!in.moments) throw ContractViolation("reconstruction_guidance: moments missing");
  const DenoiserMoments& m = *in.moments;
  if (!(m.sigma > 0.0)) throw ContractViolation("reconstruction_guidance: sigma must be positive");
  detail::require_dim(obs.op.cols(), m.mean.size(), "reconstruction_guidance");
  const Covariance& cov = m.covariance;
  const LinearMap sigma_apply = [&](const Vector& v) { return freehunch::apply(cov, v); };
  const Vector residual = obs.y - obs.op.apply(m.mean);
  GuidanceResult out;
  out.cg_rtol = rtol_for_sigma(opt.cg, m.sigma);
  const CgResult z = detail::solve_innovation(obs, sigma_apply, diagonal(cov), residual, out.cg_rtol, opt.cg);
  out.cg_iterations = z.iterations;
  out.cg_residual = z.residual_norm;
  out.converged = z.converged;
  const Vector v = obs.op.apply_transpose(z.x);
  out.gradient = apply_jacobian(opt.jacobian, in, cov, v);
  if (opt.fallback && opt.jacobian == JacobianStrategy::ExactOracle) {
    const double s2 = m.sigma * m.sigma;
    const double raw = detail::max_abs(s2 * out.gradient);
    if (raw > 1.0) {
      Vector alt = freehunch::apply(cov, v) / s2;
      if (detail::max_abs(s2 * alt) < raw) {
        out.gradient = std::move(alt);
        out.fallback_used = true;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// baselines

enum class BaselineKind { DPS, PiGDM, PiGDMNoScale, HeuristicSigma, FreeHunch, OptimalCovariance };

struct BaselineRule {
  BaselineKind kind = BaselineKind::FreeHunch;
  double xi = 1.0;  // DPS step scale

  static BaselineRule dps(double xi) {
    if (!(xi > 0.0)) throw ContractViolation("BaselineRule: DPS xi must be positive");
    return {BaselineKind::DPS, xi};
  }
};

inline const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::DPS: return "dps";
    case BaselineKind::PiGDM: return "pigdm";
    case BaselineKind::PiGDMNoScale: return "pigdm_noscale";
    case BaselineKind::HeuristicSigma: return "heuristic_sigma";
    case BaselineKind::FreeHunch: return "freehunch";
    case BaselineKind::OptimalCovariance: return "optimal";
  }
  return "unknown";
}

/// Rewrites g so that the guided denoiser mean mu + sigma^2 g lies in [lo, hi].
inline Vector clip_guidance(const Vector& g, const Vector& mean, double sigma, double lo = -1.0, double hi = 1.0) {
  const double s2 = sigma * sigma;
  const Vector guided = (mean + s2 * g).cwiseMax(lo).cwiseMin(hi);
  return (guided - mean) / s2;
}

/// r^2 I guidance: J A^T (r^2 A A^T + sigma_y^2 I)^-1 (y - A mu).
inline GuidanceResult isotropic_guidance(const GuidanceInputs& in, const LinearObservation& obs, double r2,
                                         const GuidanceOptions& opt) {
  const DenoiserMoments& m = *in.moments;
  const Index n = m.mean.size();
  const LinearMap sigma_apply = [r2](const Vector& v) { return Vector(r2 * v); };
  const Vector residual = obs.y - obs.op.apply(m.mean);
  GuidanceResult out;
  out.cg_rtol = rtol_for_sigma(opt.cg, m.sigma);
  Vector z;
  if (obs.op.is_identity()) {
    z = residual / (r2 + obs.noise_std * obs.noise_std);
  } else {
    const CgResult res = detail::solve_innovation(obs, sigma_apply, Vector::Constant(n, r2), residual,
                                                  out.cg_rtol, opt.cg);
    out.cg_iterations = res.iterations;
    out.cg_residual = res.residual_norm;
    out.converged = res.converged;
    z = res.x;
  }
  const Vector v = obs.op.apply_transpose(z);
  if (opt.jacobian == JacobianStrategy::CovarianceApprox) {
    out.gradient = r2 * v / (m.sigma * m.sigma);
  } else {
    out.gradient = apply_jacobian(opt.jacobian, in, m.covariance, v);  // covariance argument unused here
  }
  return out;
}

/// Dispatches a guidance rule. `opt.jacobian` is the Jacobian used by every
/// rule (with the exact oracle it plays the role of differentiating through
/// the denoiser).
inline GuidanceResult baseline_guidance(const BaselineRule& rule, const GuidanceInputs& in,
                                        const LinearObservation& obs, const GuidanceOptions& opt) {
  if (!in.moments) throw ContractViolation("baseline_guidance: moments missing");
  const DenoiserMoments& m = *in.moments;
  const double s2 = m.sigma * m.sigma;
  switch (rule.kind) {
    case BaselineKind::DPS: {
      // Sigma = 0 gives A^T r / sigma_y^2; the step scale xi sigma_y^2 / ||r||
      // cancels the noise variance, so sigma_y = 0 is fine too.
      const Vector residual = obs.y - obs.op.apply(m.mean);
      const double rn = residual.norm();
      GuidanceResult out;
      if (rn == 0.0) {
        out.gradient = Vector::Zero(m.mean.size());
        return out;
      }
      const Vector v = obs.op.apply_transpose(residual) * (rule.xi / rn);
      const Covariance zero{LowRankDiagMatrix::identity(m.mean.size(), 0.0), nullptr};
      out.gradient = apply_jacobian(opt.jacobian, in, zero, v);
      return out;
    }
    case BaselineKind::PiGDM:
    case BaselineKind::PiGDMNoScale: {
      const double r2 = s2 / (1.0 + s2);
      GuidanceResult out = isotropic_guidance(in, obs, r2, opt);
      if (rule.kind == BaselineKind::PiGDM) out.gradient *= r2;
      return out;
    }
    case BaselineKind::HeuristicSigma:
      return isotropic_guidance(in, obs, s2, opt);
    case BaselineKind::FreeHunch:
      return reconstruction_guidance(in, obs, opt);
    case BaselineKind::OptimalCovariance: {
      if (!in.exact_covariance) {
        throw ContractViolation("baseline_guidance: optimal covariance rule needs the exact covariance");
      }
      DenoiserMoments exact = m;
      exact.covariance = *in.exact_covariance;
      GuidanceInputs exact_in{&exact, in.exact_covariance};
      GuidanceOptions o = opt;
      o.fallback = false;
      return reconstruction_guidance(exact_in, obs, o);
    }
  }
  throw ContractViolation("baseline_guidance: unknown rule");
}

}  // namespace freehunch
