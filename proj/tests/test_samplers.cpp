#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "freehunch/experiments.hpp"
#include "freehunch/samplers.hpp"
#include "freehunch/score_oracle.hpp"
#include "support.hpp"

using namespace freehunch;

namespace {

// N(0, 1) data: score of the smoothed density and the exact flow
Vector gauss_score(const Vector& x, double t) { return -x / (1.0 + t * t); }
double gauss_flow(double x, double from, double to) { return x * std::sqrt((1 + to * to) / (1 + from * from)); }

GaussianMixture three_modes() {
  Vector w(3);
  w << 0.5, 0.3, 0.2;
  std::vector<Vector> means(3, Vector(2));
  means[0] << -1.5, 0.0;
  means[1] << 1.0, 1.0;
  means[2] << 1.0, -1.5;
  Matrix c0(2, 2), c1(2, 2), c2(2, 2);
  c0 << 0.3, 0.1, 0.1, 0.2;
  c1 << 0.2, 0.0, 0.0, 0.4;
  c2 << 0.25, -0.1, -0.1, 0.25;
  return GaussianMixture(w, means, {DenseSymMatrix(c0), DenseSymMatrix(c1), DenseSymMatrix(c2)});
}

// mean and covariance agree with the truth within k standard errors per entry
void expect_moments(const Matrix& s, const Vector& mean, const Matrix& cov, double k) {
  const double n = static_cast<double>(s.rows());
  const Eigen::RowVectorXd m = s.colwise().mean();
  const Matrix c = s.rowwise() - m;
  const Matrix emp = c.transpose() * c / (n - 1);
  for (Index i = 0; i < s.cols(); ++i) {
    EXPECT_LT(std::abs(m(i) - mean(i)), k * std::sqrt(cov(i, i) / n)) << i;
    for (Index j = 0; j < s.cols(); ++j) {
      const Vector prod = c.col(i).cwiseProduct(c.col(j));
      const double se = std::sqrt((prod.array() - prod.mean()).square().sum() / (n - 1) / n);
      EXPECT_LT(std::abs(emp(i, j) - cov(i, j)), k * se) << i << "," << j;
    }
  }
}

SamplerConfig fh_config(const GaussianMixture& g, const LinearObservation& obs, Index steps) {
  SamplerConfig cfg;
  cfg.solver = SolverKind::Euler;
  cfg.grid = karras_timesteps(steps, 0.002, 20.0, 7.0);
  GuidanceConfig gc;
  gc.obs = obs;
  gc.rule = {BaselineKind::FreeHunch};
  gc.options.cg = CgSettings::constant(1e-12);
  cfg.guidance = gc;
  TrackingConfig tc;
  tc.initial = Covariance{g.covariance(), nullptr};
  tc.config.init_sigma = 20.0;
  tc.config.space_lo = 0.002;
  tc.config.space_hi = 20.0;
  cfg.tracking = tc;
  return cfg;
}

}  // namespace

TEST(Karras, Endpoints) {
  const TimeGrid g = karras_timesteps(10, 0.002, 80.0, 7.0);
  ASSERT_EQ(g.t.size(), 11u);
  EXPECT_EQ(g.t[0], 80.0);
  EXPECT_EQ(g.t[9], 0.002);
  EXPECT_EQ(g.t[10], 0.0);
  EXPECT_EQ(g.steps(), 10);
  // t_1 by hand
  const double a = std::pow(80.0, 1 / 7.0), b = std::pow(0.002, 1 / 7.0);
  EXPECT_NEAR(g.t[1], std::pow(a + (b - a) / 9.0, 7.0), 1e-12);
}

TEST(Karras, LinearWhenRhoIsOne) {
  const TimeGrid g = karras_timesteps(5, 1.0, 9.0, 1.0);
  const std::vector<double> expected = {9.0, 7.0, 5.0, 3.0, 1.0, 0.0};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(g.t[i], expected[i], 1e-13);
}

TEST(Karras, DecreasingForRandomSettings) {
  Rng rng = make_stream(50, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const Index n = 2 + static_cast<Index>(uniform01(rng) * 300);
    const double rho = fhtest::uniform(rng, 0.5, 10.0);
    const double lo = std::exp(fhtest::uniform(rng, -7.0, 0.0));
    const double hi = lo * std::exp(fhtest::uniform(rng, 0.1, 10.0));
    const TimeGrid g = karras_timesteps(n, lo, hi, rho);
    EXPECT_EQ(g.t.front(), hi);
    EXPECT_EQ(g.t[static_cast<std::size_t>(n - 1)], lo);
    for (std::size_t i = 1; i < g.t.size(); ++i) EXPECT_LT(g.t[i], g.t[i - 1]);
  }
}

TEST(Karras, Errors) {
  EXPECT_THROW(karras_timesteps(1, 0.1, 1.0, 7.0), ContractViolation);
  EXPECT_THROW(karras_timesteps(10, 1.0, 1.0, 7.0), ContractViolation);
  EXPECT_THROW(karras_timesteps(10, 0.0, 1.0, 7.0), ContractViolation);
  EXPECT_THROW(karras_timesteps(10, 0.1, 1.0, 0.0), ContractViolation);
}

TEST(Euler, ZeroScoreKeepsState) {
  const Vector x = (Vector(2) << 1.0, -2.0).finished();
  const auto r = euler_step(x, 3.0, 2.0, Vector::Zero(2));
  EXPECT_TRUE(r.x_next == x);
  EXPECT_TRUE(r.delta_x == Vector::Zero(2));
}

TEST(Euler, MatchesClosedFormFlow) {
  const Index steps = 10000;
  const double big_t = 20.0;
  Vector x = Vector::Constant(1, 7.0);
  for (Index i = 0; i < steps; ++i) {
    const double t = big_t * (1.0 - static_cast<double>(i) / steps);
    const double tn = big_t * (1.0 - static_cast<double>(i + 1) / steps);
    x = euler_step(x, t, tn, gauss_score(x, t)).x_next;
  }
  const double exact = gauss_flow(7.0, big_t, 0.0);
  EXPECT_NEAR(x(0), exact, 1e-3 * std::abs(exact));
}

TEST(Euler, LocalErrorIsSecondOrder) {
  const Vector x = Vector::Constant(1, 1.3);
  std::vector<double> defect;
  for (double h : {0.2, 0.1, 0.05, 0.025}) {
    const double out = euler_step(x, 1.0, 1.0 - h, gauss_score(x, 1.0)).x_next(0);
    defect.push_back(std::abs(out - gauss_flow(1.3, 1.0, 1.0 - h)));
  }
  for (std::size_t i = 1; i < defect.size(); ++i) {
    const double order = std::log2(defect[i - 1] / defect[i]);
    EXPECT_GT(order, 1.9);
    EXPECT_LT(order, 2.2);
  }
}

TEST(EulerMaruyama, NoiseAndDriftTerms) {
  const Vector x = (Vector(2) << 0.5, 1.0).finished();
  EXPECT_TRUE(euler_maruyama_step(x, 2.0, 1.0, Vector::Zero(2), Vector::Zero(2)).x_next == x);
  const Vector z = (Vector(2) << 1.0, -1.0).finished();
  // doubling t * dt doubles the injected variance
  const Vector a = euler_maruyama_step(x, 2.0, 1.5, Vector::Zero(2), z).delta_x;
  const Vector b = euler_maruyama_step(x, 2.0, 1.0, Vector::Zero(2), z).delta_x;
  EXPECT_NEAR(b.squaredNorm(), 2.0 * a.squaredNorm(), 1e-14);
  // drift is twice the ODE drift
  const Vector s = (Vector(2) << 0.3, -0.7).finished();
  const Vector ode = euler_step(x, 2.0, 1.5, s).delta_x;
  const Vector sde = euler_maruyama_step(x, 2.0, 1.5, s, Vector::Zero(2)).delta_x;
  EXPECT_LT((sde - 2.0 * ode).norm(), 1e-15);
}

TEST(EulerMaruyama, TerminalVarianceMatchesData) {
  const TimeGrid g = karras_timesteps(200, 0.002, 20.0, 7.0);
  const Index n = 100000;
  Rng rng = make_stream(51, 0);
  double sum = 0.0, sum2 = 0.0;
  Vector x(1), z(1);
  for (Index k = 0; k < n; ++k) {
    x(0) = 20.0 * standard_normal(rng, 1)(0);
    for (Index i = 0; i < g.steps(); ++i) {
      const double t = g.t[static_cast<std::size_t>(i)], tn = g.t[static_cast<std::size_t>(i + 1)];
      x = euler_maruyama_step(x, t, tn, gauss_score(x, t), rng).x_next;
    }
    sum += x(0);
    sum2 += x(0) * x(0);
  }
  const double mean = sum / n;
  const double var = (sum2 - n * mean * mean) / (n - 1);
  const double se = std::sqrt(2.0 / (n - 1));  // of a unit-variance sample variance
  EXPECT_LT(std::abs(var - 1.0), 3.0 * se);
}

TEST(Heun, LocalErrorIsThirdOrder) {
  const Vector x = Vector::Constant(1, 1.3);
  std::vector<double> defect;
  for (double h : {0.2, 0.1, 0.05, 0.025}) {
    const auto r = heun_step(x, 1.0, 1.0 - h, gauss_score);
    EXPECT_EQ(r.evaluations.size(), 2u);
    defect.push_back(std::abs(r.x_next(0) - gauss_flow(1.3, 1.0, 1.0 - h)));
  }
  for (std::size_t i = 1; i < defect.size(); ++i) EXPECT_GT(std::log2(defect[i - 1] / defect[i]), 2.8);
}

TEST(Heun, EndpointAndZeroScore) {
  const Vector x = Vector::Constant(2, 0.7);
  const auto zero = heun_step(x, 2.0, 1.0, [](const Vector& v, double) { return Vector(Vector::Zero(v.size())); });
  EXPECT_TRUE(zero.x_next == x);
  const auto last = heun_step(x, 0.5, 0.0, gauss_score);
  ASSERT_EQ(last.evaluations.size(), 1u);
  EXPECT_TRUE(last.x_next == euler_step(x, 0.5, 0.0, gauss_score(x, 0.5)).x_next);
}

TEST(Sampling, UnguidedMatchesMixtureMoments) {
  const auto g = three_modes();
  SamplerConfig cfg;
  cfg.grid = karras_timesteps(200, 0.002, 20.0, 7.0);
  const SampleSet s = sample(cfg, mixture_model(g), 2, 10000, 52);
  EXPECT_EQ(s.failed, 0);
  ASSERT_EQ(s.samples.rows(), 10000);
  expect_moments(s.samples, g.mean(), g.covariance().entries(), 3.0);
}

TEST(Sampling, ConditionalOracleMatchesPosterior) {
  const auto g = three_modes();
  const LinearObservation obs(LinearOperator::identity(2), (Vector(2) << 0.2, 0.3).finished(), 0.8);
  const auto post = gmm_posterior_given_y(g, obs);
  const ScoreModel model = [&](const Vector& x, double s, bool) {
    return ModelEvaluation{gmm_conditional_score(g, obs, x, s), std::nullopt};
  };
  SamplerConfig cfg;
  cfg.solver = SolverKind::Heun;
  // x_T ~ N(0, sigma_max^2 I) ignores the posterior mean (about 0.3 here); at
  // sigma_max = 20 that start offset biases the terminal mean by ~2 standard
  // errors, so start far enough out for it to vanish
  cfg.grid = karras_timesteps(80, 0.002, 200.0, 7.0);
  const SampleSet s = sample(cfg, model, 2, 10000, 53);
  expect_moments(s.samples, post.mean(), post.covariance().entries(), 3.0);
}

TEST(Sampling, FusedLoopMatchesGenericLoop) {
  const auto g = three_modes();
  const LinearObservation obs(LinearOperator::mask({0}, 2), Vector::Constant(1, 0.5), 0.3);
  for (bool explicit_transfer : {false, true}) {
    SamplerConfig cfg = fh_config(g, obs, 40);
    cfg.tracking->explicit_transfer = explicit_transfer;
    const ScoreModel model = mixture_model(g);
    for (std::uint64_t stream = 0; stream < 20; ++stream) {
      Rng a = make_stream(54, stream), b = make_stream(54, stream);
      const auto generic = sample_trajectory(cfg, model, 2, a);
      const auto fused = sample_euler_fused(cfg, model, 2, b);
      ASSERT_EQ(generic.ok, fused.ok);
      EXPECT_TRUE(generic.x == fused.x) << stream;
      EXPECT_EQ(generic.evaluations, fused.evaluations);
      EXPECT_EQ(generic.accepted_updates, fused.accepted_updates);
    }
  }
}

TEST(Sampling, DeterministicAcrossRunsAndWorkers) {
  const auto g = three_modes();
  const LinearObservation obs(LinearOperator::identity(2), Vector::Constant(2, 0.5), 0.5);
  SamplerConfig cfg = fh_config(g, obs, 30);
  cfg.solver = SolverKind::EulerMaruyama;
  const ScoreModel model = mixture_model(g);
  const char* old = std::getenv("FH_THREADS");
  const std::string saved = old ? old : "";
  setenv("FH_THREADS", "1", 1);
  const SampleSet a = sample(cfg, model, 2, 64, 55);
  setenv("FH_THREADS", "4", 1);
  const SampleSet b = sample(cfg, model, 2, 64, 55);
  const SampleSet c = sample(cfg, model, 2, 64, 56);
  if (old) setenv("FH_THREADS", saved.c_str(), 1);
  else unsetenv("FH_THREADS");
  EXPECT_TRUE(a.samples == b.samples);
  EXPECT_EQ(a.accepted_updates, b.accepted_updates);
  EXPECT_FALSE(a.samples == c.samples);
}

TEST(Sampling, HeunFeedsBothEvaluationsToTracker) {
  const auto g = three_modes();
  const LinearObservation obs(LinearOperator::identity(2), Vector::Constant(2, 0.5), 0.5);
  SamplerConfig cfg = fh_config(g, obs, 20);
  cfg.solver = SolverKind::Heun;
  const ScoreModel model = mixture_model(g);
  std::vector<double> sigmas;
  const StepObserver obs_fn = [&](const StepRecord& r) { sigmas.push_back(r.sigma); };
  Rng rng = make_stream(57, 0);
  const auto r = sample_trajectory(cfg, model, 2, rng, &obs_fn);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.evaluations, 2 * 20 - 1);
  EXPECT_EQ(static_cast<Index>(sigmas.size()), r.evaluations);
  EXPECT_EQ(r.accepted_updates + r.skipped_updates, r.evaluations - 1);
  cfg.heun_track_corrector = false;
  Rng rng2 = make_stream(57, 0);
  const auto p = sample_trajectory(cfg, model, 2, rng2);
  EXPECT_EQ(p.accepted_updates + p.skipped_updates, 20 - 1);
}

TEST(Sampling, NonFiniteScoreAbortsTrajectory) {
  SamplerConfig cfg;
  cfg.grid = karras_timesteps(10, 0.002, 20.0, 7.0);
  const ScoreModel model = [](const Vector& x, double s, bool) {
    Vector out = -x / (1 + s * s);
    if (s < 1.0) out(0) = std::nan("");
    return ModelEvaluation{out, std::nullopt};
  };
  const SampleSet s = sample(cfg, model, 2, 5, 58);
  EXPECT_EQ(s.failed, 5);
  EXPECT_EQ(s.samples.rows(), 0);
  ASSERT_FALSE(s.failures.empty());
  EXPECT_NE(s.failures[0].find("non-finite"), std::string::npos);
}

TEST(Sampling, FusedLoopNeedsFreeHunch) {
  SamplerConfig cfg;
  cfg.grid = karras_timesteps(10, 0.002, 20.0, 7.0);
  Rng rng = make_stream(59, 0);
  EXPECT_THROW(sample_euler_fused(cfg, mixture_model(three_modes()), 2, rng), ContractViolation);
}
