#pragma once

// Reverse-time integrators for the variance-exploding process with
// sigma(t) = t, and the guided sampling loop that routes every denoiser
// evaluation through the covariance tracker.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "freehunch/errors.hpp"
#include "freehunch/guidance.hpp"
#include "freehunch/matrix_core.hpp"
#include "freehunch/moments.hpp"
#include "freehunch/observation.hpp"
#include "freehunch/parallel.hpp"
#include "freehunch/random.hpp"
#include "freehunch/tracker.hpp"

namespace freehunch {

struct TimeGrid {
  std::vector<double> t;  // t_0 > ... > t_{N-1} > t_N = 0
  double rho = 7.0;
  double sigma_min = 0.002;
  double sigma_max = 20.0;

  Index steps() const { return static_cast<Index>(t.size()) - 1; }
};

inline TimeGrid karras_timesteps(Index n, double sigma_min, double sigma_max, double rho) {
  if (n < 2) throw ContractViolation("karras_timesteps: need at least 2 steps");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min)) {
    throw ContractViolation("karras_timesteps: need 0 < sigma_min < sigma_max");
  }
  if (!(rho > 0.0)) throw ContractViolation("karras_timesteps: rho must be positive");
  TimeGrid g;
  g.rho = rho;
  g.sigma_min = sigma_min;
  g.sigma_max = sigma_max;
  g.t.resize(static_cast<std::size_t>(n + 1));
  const double a = std::pow(sigma_max, 1.0 / rho);
  const double b = std::pow(sigma_min, 1.0 / rho);
  for (Index i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
    g.t[static_cast<std::size_t>(i)] = std::pow(a + frac * (b - a), rho);
  }
  g.t.front() = sigma_max;
  g.t[static_cast<std::size_t>(n - 1)] = sigma_min;
  g.t.back() = 0.0;
  return g;
}

struct StepResult {
  Vector x_next;
  Vector delta_x;
};

/// Probability-flow ODE step dx = -t * score * dt.
inline StepResult euler_step(const Vector& x, double t, double t_next, const Vector& total_score) {
  Vector dx = -t * total_score * (t_next - t);
  return {x + dx, dx};
}

/// Reverse SDE step with an explicit standard-normal draw `noise`.
inline StepResult euler_maruyama_step(const Vector& x, double t, double t_next, const Vector& total_score,
                                      const Vector& noise) {
  Vector dx = -2.0 * t * total_score * (t_next - t) + std::sqrt(2.0 * t * std::abs(t_next - t)) * noise;
  return {x + dx, dx};
}

inline StepResult euler_maruyama_step(const Vector& x, double t, double t_next, const Vector& total_score,
                                      Rng& rng) {
  return euler_maruyama_step(x, t, t_next, total_score, standard_normal(rng, x.size()));
}

struct Evaluation {
  Vector x;
  double sigma = 0.0;
  Vector score;
};

struct HeunResult {
  Vector x_next;
  Vector delta_x;
  std::vector<Evaluation> evaluations;
};

using ScoreFn = std::function<Vector(const Vector& x, double sigma)>;

/// Second-order step: Euler predictor, trapezoidal corrector. The final step
/// to t = 0 is a plain Euler step.
inline HeunResult heun_step(const Vector& x, double t, double t_next, const ScoreFn& score_fn) {
  HeunResult out;
  const Vector s1 = score_fn(x, t);
  out.evaluations.push_back({x, t, s1});
  const Vector d1 = -t * s1;
  const Vector pred = x + (t_next - t) * d1;
  if (t_next == 0.0) {
    out.delta_x = pred - x;
    out.x_next = pred;
    return out;
  }
  const Vector s2 = score_fn(pred, t_next);
  out.evaluations.push_back({pred, t_next, s2});
  const Vector d2 = -t_next * s2;
  out.delta_x = (t_next - t) * 0.5 * (d1 + d2);
  out.x_next = x + out.delta_x;
  return out;
}

// ---------------------------------------------------------------------------
// guided sampling

enum class SolverKind { Euler, EulerMaruyama, Heun };

inline const char* to_string(SolverKind k) {
  switch (k) {
    case SolverKind::Euler: return "euler";
    case SolverKind::EulerMaruyama: return "euler_maruyama";
    case SolverKind::Heun: return "heun";
  }
  return "unknown";
}

/// Output of the score model at (x, sigma). `covariance` is Cov[x0 | x_t],
/// filled only when requested and available.
struct ModelEvaluation {
  Vector score;
  std::optional<Covariance> covariance;
};

using ScoreModel = std::function<ModelEvaluation(const Vector& x, double sigma, bool want_covariance)>;

struct GuidanceConfig {
  LinearObservation obs;
  BaselineRule rule;
  GuidanceOptions options;
  bool clip = false;
  double clip_lo = -1.0;
  double clip_hi = 1.0;
};

struct TrackingConfig {
  Covariance initial;
  TrackerConfig config;
  bool explicit_transfer = false;  // one extra evaluation per step for the BFGS pair
};

struct SamplerConfig {
  SolverKind solver = SolverKind::Euler;
  TimeGrid grid;
  std::optional<GuidanceConfig> guidance;
  std::optional<TrackingConfig> tracking;
  bool heun_track_corrector = true;
};

struct StepRecord {
  Index step = 0;
  double sigma = 0.0;
  const Vector* x = nullptr;
  const DenoiserMoments* moments = nullptr;  // tracked moments when tracking
  double guidance_max_abs = 0.0;             // of sigma^2 * g
  SpaceOutcome outcome = SpaceOutcome::NotAttempted;
  bool fallback_used = false;
  bool cg_converged = true;
};

using StepObserver = std::function<void(const StepRecord&)>;

struct TrajectoryResult {
  Vector x;
  bool ok = true;
  std::string failure;
  Index evaluations = 0;
  Index fallbacks = 0;
  Index accepted_updates = 0;
  Index skipped_updates = 0;
  Index cg_not_converged = 0;
};

namespace detail {

inline bool needs_exact_covariance(const SamplerConfig& cfg) {
  if (!cfg.guidance) return false;
  return cfg.guidance->options.jacobian == JacobianStrategy::ExactOracle ||
         cfg.guidance->rule.kind == BaselineKind::OptimalCovariance;
}

/// Evaluates the model, feeds the tracker and returns the guided score.
class GuidedScore {
 public:
  GuidedScore(const SamplerConfig& cfg, const ScoreModel& model, TrajectoryResult& stats,
              const StepObserver* observer)
      : cfg_(cfg), model_(model), stats_(stats), observer_(observer) {
    if (cfg_.tracking) tracker_ = make_tracker(cfg_.tracking->initial, cfg_.tracking->config);
  }

  Vector operator()(const Vector& x, double sigma, Index step, bool commit) {
    const bool want_cov = needs_exact_covariance(cfg_);
    ModelEvaluation ev = model_(x, sigma, want_cov);
    ++stats_.evaluations;
    if (!ev.score.allFinite()) throw NumericalBreakdown("sampler: non-finite score");
    const double s2 = sigma * sigma;
    const Vector mean = x + s2 * ev.score;

    StepRecord rec;
    rec.step = step;
    rec.sigma = sigma;
    rec.x = &x;

    DenoiserMoments moments;
    if (tracker_) {
      std::optional<Vector> exact;
      if (cfg_.tracking->explicit_transfer && tracker_->prev_location) {
        const ModelEvaluation prev = model_(*tracker_->prev_location, sigma, false);
        ++stats_.evaluations;
        exact = *tracker_->prev_location + s2 * prev.score;
      }
      ProcessResult r = process_denoiser(*tracker_, mean, x, sigma, exact);
      rec.outcome = r.outcome;
      if (commit) {
        if (r.outcome == SpaceOutcome::Accepted) ++stats_.accepted_updates;
        else if (r.outcome != SpaceOutcome::NotAttempted && r.outcome != SpaceOutcome::Disabled)
          ++stats_.skipped_updates;
        tracker_ = std::move(r.state);
      }
      moments = std::move(r.moments);
    } else {
      const Index n = x.size();
      moments = DenoiserMoments{mean, Covariance{LowRankDiagMatrix::identity(n, s2 / (1.0 + s2)), nullptr},
                                sigma, x};
    }
    rec.moments = &moments;

    Vector total = ev.score;
    if (cfg_.guidance) {
      const GuidanceConfig& gc = *cfg_.guidance;
      GuidanceInputs in{&moments, ev.covariance ? &*ev.covariance : nullptr};
      GuidanceResult g = baseline_guidance(gc.rule, in, gc.obs, gc.options);
      if (gc.clip) g.gradient = clip_guidance(g.gradient, mean, sigma, gc.clip_lo, gc.clip_hi);
      if (g.fallback_used) ++stats_.fallbacks;
      if (!g.converged) ++stats_.cg_not_converged;
      rec.fallback_used = g.fallback_used;
      rec.cg_converged = g.converged;
      rec.guidance_max_abs = detail::max_abs(s2 * g.gradient);
      total += g.gradient;
    }
    if (observer_ && *observer_) (*observer_)(rec);
    return total;
  }

 private:
  const SamplerConfig& cfg_;
  const ScoreModel& model_;
  TrajectoryResult& stats_;
  const StepObserver* observer_;
  std::optional<TrackerState> tracker_;
};

}  // namespace detail

/// One trajectory from x ~ N(0, sigma_max^2 I) down to t = 0.
inline TrajectoryResult sample_trajectory(const SamplerConfig& cfg, const ScoreModel& model, Index dim, Rng& rng,
                                          const StepObserver* observer = nullptr) {
  const TimeGrid& grid = cfg.grid;
  if (grid.t.size() < 3) throw ContractViolation("sample_trajectory: time grid has too few points");
  TrajectoryResult out;
  out.x = grid.t.front() * standard_normal(rng, dim);
  try {
    detail::GuidedScore guided(cfg, model, out, observer);
    for (Index i = 0; i < grid.steps(); ++i) {
      const double t = grid.t[static_cast<std::size_t>(i)];
      const double t_next = grid.t[static_cast<std::size_t>(i + 1)];
      switch (cfg.solver) {
        case SolverKind::Euler: {
          out.x = euler_step(out.x, t, t_next, guided(out.x, t, i, true)).x_next;
          break;
        }
        case SolverKind::EulerMaruyama: {
          const Vector total = guided(out.x, t, i, true);
          out.x = euler_maruyama_step(out.x, t, t_next, total, rng).x_next;
          break;
        }
        case SolverKind::Heun: {
          Index calls = 0;
          const ScoreFn fn = [&](const Vector& x, double s) {
            const bool commit = calls++ == 0 || cfg.heun_track_corrector;
            return guided(x, s, i, commit);
          };
          out.x = heun_step(out.x, t, t_next, fn).x_next;
          break;
        }
      }
      if (!out.x.allFinite()) throw NumericalBreakdown("sampler: non-finite state at step " + std::to_string(i));
    }
  } catch (const NumericalError& e) {
    out.ok = false;
    out.failure = e.what();
  }
  return out;
}

struct SampleSet {
  Matrix samples;  // successful trajectories, one per row, in stream order
  Index failed = 0;
  Index evaluations = 0;
  Index fallbacks = 0;
  Index accepted_updates = 0;
  Index skipped_updates = 0;
  Index cg_not_converged = 0;
  std::vector<std::string> failures;
};

/// n independent trajectories; trajectory i draws from stream i of `seed`.
inline SampleSet sample(const SamplerConfig& cfg, const ScoreModel& model, Index dim, Index n, std::uint64_t seed) {
  std::vector<TrajectoryResult> runs(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    Rng rng = make_stream(seed, i);
    runs[i] = sample_trajectory(cfg, model, dim, rng);
  });
  SampleSet out;
  Index good = 0;
  for (const auto& r : runs) good += r.ok ? 1 : 0;
  out.samples.resize(good, dim);
  Index row = 0;
  for (const auto& r : runs) {
    out.evaluations += r.evaluations;
    out.fallbacks += r.fallbacks;
    out.accepted_updates += r.accepted_updates;
    out.skipped_updates += r.skipped_updates;
    out.cg_not_converged += r.cg_not_converged;
    if (r.ok) {
      out.samples.row(row++) = r.x.transpose();
    } else {
      ++out.failed;
      if (out.failures.size() < 8) out.failures.push_back(r.failure);
    }
  }
  return out;
}

/// The Euler-specific loop with the time update folded into the end of each
/// step. Same arithmetic as sample_trajectory with an Euler solver and a
/// free-hunch guidance rule; kept separate as a cross-check.
inline TrajectoryResult sample_euler_fused(const SamplerConfig& cfg, const ScoreModel& model, Index dim, Rng& rng) {
  if (!cfg.guidance || !cfg.tracking || cfg.guidance->rule.kind != BaselineKind::FreeHunch) {
    throw ContractViolation("sample_euler_fused: needs free-hunch guidance and a tracker");
  }
  const TimeGrid& grid = cfg.grid;
  const GuidanceConfig& gc = *cfg.guidance;
  const TrackerConfig& tc = cfg.tracking->config;
  TrajectoryResult out;
  out.x = grid.t.front() * standard_normal(rng, dim);

  Covariance sigma_cov = cfg.tracking->initial;
  sigma_cov.matrix = detail::time_update_matrix(sigma_cov.matrix, tc.init_sigma, grid.t.front());
  std::optional<Vector> mu_transferred;
  Vector x_prev;
  const bool want_cov = detail::needs_exact_covariance(cfg);
  try {
    for (Index i = 0; i < grid.steps(); ++i) {
      const double t = grid.t[static_cast<std::size_t>(i)];
      const double t_next = grid.t[static_cast<std::size_t>(i + 1)];
      const double s2 = t * t;
      const ModelEvaluation ev = model(out.x, t, want_cov);
      ++out.evaluations;
      const Vector mu = out.x + s2 * ev.score;

      if (mu_transferred) {
        if (cfg.tracking->explicit_transfer) {
          mu_transferred = x_prev + s2 * model(x_prev, t, false).score;
          ++out.evaluations;
        }
        SpaceOutcome outcome;
        if (!tc.space_updates) {
          outcome = SpaceOutcome::Disabled;
        } else if (t < tc.space_lo || t > tc.space_hi) {
          outcome = SpaceOutcome::SkippedRange;
        } else {
          const Vector dx = out.x - x_prev;
          const Vector de = t * t * (mu - *mu_transferred);
          auto r = bfgs_update(sigma_cov, dx, de, tc.curvature_tolerance);
          sigma_cov = std::move(r.covariance);
          outcome = r.outcome;
        }
        if (outcome == SpaceOutcome::Accepted) ++out.accepted_updates;
        else if (outcome != SpaceOutcome::Disabled) ++out.skipped_updates;
      }

      const DenoiserMoments moments{mu, sigma_cov, t, out.x};
      GuidanceInputs in{&moments, ev.covariance ? &*ev.covariance : nullptr};
      GuidanceResult g = reconstruction_guidance(in, gc.obs, gc.options);
      if (gc.clip) g.gradient = clip_guidance(g.gradient, mu, t, gc.clip_lo, gc.clip_hi);
      if (g.fallback_used) ++out.fallbacks;
      if (!g.converged) ++out.cg_not_converged;

      x_prev = out.x;
      out.x = euler_step(out.x, t, t_next, ev.score + g.gradient).x_next;
      if (!out.x.allFinite()) throw NumericalBreakdown("sampler: non-finite state at step " + std::to_string(i));

      if (t_next > 0.0) {
        DenoiserMoments moved = time_update(DenoiserMoments{mu, sigma_cov, t, x_prev}, t_next);
        mu_transferred = std::move(moved.mean);
        sigma_cov = std::move(moved.covariance);
      }
    }
  } catch (const NumericalError& e) {
    out.ok = false;
    out.failure = e.what();
  }
  return out;
}

}  // namespace freehunch
