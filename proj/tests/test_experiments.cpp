#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "freehunch/experiments.hpp"
#include "support.hpp"

using namespace freehunch;

namespace {

std::string csv_text(const CsvTable& t) {
  std::ostringstream os;
  t.write(os);
  return os.str();
}

std::size_t column(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (t.columns[i] == name) return i;
  }
  ADD_FAILURE() << "no column " << name;
  return 0;
}

}  // namespace

TEST(Csv, QuotingAndLineEndings) {
  CsvTable t;
  t.columns = {"a", "b"};
  t.add({"x,y", "say \"hi\""});
  t.add({"plain", "two\nlines"});
  EXPECT_EQ(csv_text(t), "a,b\r\n\"x,y\",\"say \"\"hi\"\"\"\r\nplain,\"two\nlines\"\r\n");
}

TEST(Csv, NumbersRoundTrip) {
  Rng rng = make_stream(70, 0);
  for (int i = 0; i < 200; ++i) {
    const double v = std::ldexp(fhtest::uniform(rng, -1.0, 1.0), static_cast<int>(fhtest::uniform(rng, -60, 60)));
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(std::int64_t{-3}), "-3");
  EXPECT_EQ(format_number(std::nan("")), "nan");
}

TEST(CorrelatedDims, TrueStdClosedForm) {
  // C has eigenvalue 1 + (n-1) rho along the ones vector and 1 - rho on its
  // complement; the posterior shrinks each by lambda s^2 / (lambda + s^2)
  for (Index n : {1, 2, 7, 20}) {
    for (double rho : {0.0, 0.5, 0.999}) {
      const double s2 = 0.04;
      const double l1 = 1 + (n - 1) * rho, l2 = 1 - rho;
      const double p1 = l1 * s2 / (l1 + s2), p2 = l2 * s2 / (l2 + s2);
      const double var = p1 / n + p2 * (n - 1) / n;
      EXPECT_NEAR(correlated_true_std(n, rho, 0.2), std::sqrt(var), 1e-12) << n << " " << rho;
    }
  }
}

TEST(CorrelatedDims, ExactPosteriorSamplerCalibrates) {
  CorrelatedDimsConfig cfg;
  cfg.dims = {4, 12};
  cfg.methods = {"exact"};
  cfg.n_samples = 3000;
  const auto rep = run_correlated_dims(cfg, 3);
  for (Index n : cfg.dims) {
    const auto& e = rep.summary["mean_std"][std::to_string(n)];
    const double truth = e["true_std"].get<double>();
    // standard error of a sample std is about s / sqrt(2 m); averaging
    // correlated coordinates does not shrink it
    const double se = truth / std::sqrt(2.0 * cfg.n_samples);
    EXPECT_NEAR(e["exact"].get<double>(), truth, 3.0 * se) << n;
  }
  EXPECT_EQ(rep.table.columns, (std::vector<std::string>{"method", "seed", "dim", "mean_std", "true_std", "n_samples"}));
  EXPECT_EQ(rep.table.rows.size(), 2u);
}

TEST(CorrelatedDims, SmallRunOrdersMethods) {
  CorrelatedDimsConfig cfg;
  cfg.dims = {10};
  cfg.n_samples = 500;
  const auto rep = run_correlated_dims(cfg, 4);
  const auto& e = rep.summary["mean_std"]["10"];
  const double truth = e["true_std"].get<double>();
  EXPECT_NEAR(e["freehunch"].get<double>() / truth, 1.0, 0.25);
  EXPECT_GT(e["dps"].get<double>(), 0.0);
}

TEST(CorrelatedDims, Validation) {
  CorrelatedDimsConfig cfg;
  cfg.rho = 1.0;
  EXPECT_THROW(run_correlated_dims(cfg, 0), ContractViolation);
  cfg = CorrelatedDimsConfig{};
  cfg.dims = {2};
  cfg.methods = {"bogus"};
  cfg.n_samples = 10;
  EXPECT_THROW(run_correlated_dims(cfg, 0), ContractViolation);
}

TEST(ToyPosterior, SchemaAndSummary) {
  ToyPosteriorConfig cfg;
  cfg.n_samples = 1000;
  cfg.reference_samples = 5000;
  cfg.sampling.steps = 30;
  cfg.methods = {"dps", "pigdm", "freehunch"};
  cfg.dps_xis = {0.3, 1.0};
  const auto rep = run_toy_posterior(cfg, 5);
  EXPECT_EQ(rep.table.columns, (std::vector<std::string>{"method", "seed", "steps", "jsd", "n_samples", "wall_ms"}));
  // two sweep rows, the best-xi row, then one row per remaining method
  ASSERT_EQ(rep.table.rows.size(), 5u);
  EXPECT_EQ(rep.table.rows[0][0], "dps_xi=0.3");
  EXPECT_EQ(rep.table.rows[2][0], "dps");
  EXPECT_EQ(rep.table.rows[4][0], "freehunch");
  const auto& jsd = rep.summary["jsd"];
  for (const char* m : {"dps", "pigdm", "freehunch", "dps_xi=1"}) {
    ASSERT_TRUE(jsd.contains(m)) << m;
    EXPECT_GT(jsd[m].get<double>(), 0.0);
    EXPECT_LE(jsd[m].get<double>(), 1.0);
  }
  EXPECT_EQ(jsd["dps"].get<double>(), std::min(jsd["dps_xi=0.3"].get<double>(), jsd["dps_xi=1"].get<double>()));
  // timing is off by default so reruns compare equal
  for (const auto& row : rep.table.rows) EXPECT_EQ(row[column(rep.table, "wall_ms")], "");
}

TEST(ToyPosterior, Deterministic) {
  ToyPosteriorConfig cfg;
  cfg.n_samples = 500;
  cfg.reference_samples = 2000;
  cfg.sampling.steps = 20;
  cfg.methods = {"freehunch", "optimal"};
  const auto a = run_toy_posterior(cfg, 9);
  const auto b = run_toy_posterior(cfg, 9);
  const auto c = run_toy_posterior(cfg, 10);
  EXPECT_EQ(csv_text(a.table), csv_text(b.table));
  EXPECT_EQ(a.summary.dump(), b.summary.dump());
  EXPECT_NE(csv_text(a.table), csv_text(c.table));
}

TEST(ToyPosterior, JsdEstimatorSettlesWithSampleCount) {
  // exact posterior draws against the reference: what remains is the
  // histogram estimator's own finite-sample bias, which shrinks with n
  const auto post = gmm_posterior_given_y(default_toy_mixture(), default_toy_observation());
  Rng ref_rng = make_stream(12, 0);
  const Matrix reference = post.sample(ref_rng, 100000);
  const auto grid = HistogramGrid::box(2, -5.0, 5.0, 100);
  std::vector<double> j;
  for (Index n : {10000, 20000, 40000, 80000}) {
    Rng rng = make_stream(12, static_cast<std::uint64_t>(n));
    j.push_back(jensen_shannon(post.sample(rng, n), reference, grid).value);
  }
  for (std::size_t i = 1; i < j.size(); ++i) EXPECT_LT(j[i], j[i - 1]);
  EXPECT_LT(j[2] - j[3], 0.01);
}

TEST(ToyPosterior, Validation) {
  ToyPosteriorConfig cfg;
  cfg.methods = {"nope"};
  cfg.n_samples = 10;
  cfg.reference_samples = 10;
  EXPECT_THROW(run_toy_posterior(cfg, 0), ContractViolation);
  cfg = ToyPosteriorConfig{};
  cfg.n_samples = 1;
  EXPECT_THROW(run_toy_posterior(cfg, 0), ContractViolation);
}

TEST(CovError, SchemaAndOrdering) {
  CovErrorConfig cfg;
  cfg.step_counts = {20, 100};
  cfg.trajectories = 100;
  const auto rep = run_cov_error(cfg, 6);
  EXPECT_EQ(rep.table.columns, (std::vector<std::string>{"method", "solver", "steps_total", "step_index", "sigma",
                                                         "frobenius_error"}));
  EXPECT_EQ(rep.table.rows.size(), 2u * (20 + 100) * cov_error_methods().size());
  const auto& em = rep.summary["mean_error"]["euler_maruyama"]["100"];
  EXPECT_LE(em["time_space"].get<double>(), em["time_only"].get<double>());
  EXPECT_LE(em["time_only"].get<double>(), em["pigdm_rule"].get<double>());
  EXPECT_LE(em["time_space_explicit"].get<double>(), em["time_space"].get<double>());
  // per-step sigma column follows the grid
  const TimeGrid g = karras_timesteps(20, 0.002, 20.0, 7.0);
  EXPECT_EQ(rep.table.rows[0][column(rep.table, "sigma")], format_number(g.t[0]));
  EXPECT_EQ(rep.table.rows[5][column(rep.table, "sigma")], format_number(g.t[5]));
}

TEST(CovError, PigdmRuleMatchesByHand) {
  // one trajectory, two steps: the first row is the isotropic rule at sigma_max
  CovErrorConfig cfg;
  cfg.step_counts = {2};
  cfg.trajectories = 1;
  cfg.solvers = {SolverKind::Euler};
  const auto rep = run_cov_error(cfg, 7);
  Rng rng = make_stream(7, 0);
  const Vector x = 20.0 * standard_normal(rng, 2);
  const auto truth = gmm_denoiser_moments(cfg.mixture, x, 20.0);
  const double expected =
      (Matrix::Identity(2, 2) * (400.0 / 401.0) - to_dense(truth.covariance).entries()).norm();
  EXPECT_EQ(rep.table.rows[0][column(rep.table, "frobenius_error")], format_number(expected));
}

TEST(GuidanceNorm, ClosedFormsAndCancellation) {
  const auto rep = run_guidance_norm(GuidanceNormConfig{}, 0);
  EXPECT_LT(rep.summary["max_relative_deviation"].get<double>(), 1e-8);
  EXPECT_LT(rep.summary["max_cancellation_error"].get<double>(), 1e-8);
  // 7 dims x 2 sigmas x (3 rules at sigma_y = 0 + 4 at sigma_y = 0.1)
  EXPECT_EQ(rep.table.rows.size(), 7u * 2u * 7u);
}

TEST(GuidanceNorm, MillionParameterScale) {
  const Index n = 1000000;
  for (double sigma : {1.0, 20.0}) {
    for (double sy : {0.0, 0.1}) {
      const auto r = guidance_norm_point("diagonal", n, sigma, sy, 1.0);
      const double target = 1e6 / ((1 + sy * sy) * sigma * sigma);
      EXPECT_NEAR(r.value, target, 0.01 * target);
      const auto e = guidance_norm_point("exact", n, sigma, sy, 1.0);
      EXPECT_LE(e.value, 1.0 / (sigma * sigma) * (1 + 1e-9));  // CG at rtol 1e-10
    }
  }
}

TEST(GuidanceNorm, ExactRuleIndependentOfDimension) {
  const double base = guidance_norm_point("exact", 10, 2.0, 0.1, 0.5).value;
  for (Index n : {100, 1000, 100000}) {
    const double v = guidance_norm_point("exact", n, 2.0, 0.1, 0.5).value;
    EXPECT_NEAR(v, base, 1e-3 * base);
    EXPECT_NEAR(v, 0.5 * n / ((n + 0.01) * 4.0), 1e-10);
  }
  // the diagonal rule grows linearly instead
  const double d10 = guidance_norm_point("diagonal", 10, 2.0, 0.1, 0.5).value;
  const double d1000 = guidance_norm_point("diagonal", 1000, 2.0, 0.1, 0.5).value;
  EXPECT_NEAR(d1000 / d10, 100.0, 1e-6);
  EXPECT_THROW(guidance_norm_point("zero", 10, 1.0, 0.0, 1.0), ContractViolation);
  EXPECT_THROW(guidance_norm_point("nope", 10, 1.0, 0.1, 1.0), ContractViolation);
}

TEST(CustomSample, UnconditionalSummary) {
  CustomSampleConfig cfg;
  cfg.obs.reset();
  cfg.n_samples = 300;
  cfg.sampling.steps = 40;
  const auto rep = run_custom_sample(cfg, 8);
  EXPECT_EQ(rep.table.columns, (std::vector<std::string>{"sample", "dim_0", "dim_1"}));
  EXPECT_EQ(rep.table.rows.size(), 300u);
  EXPECT_EQ(rep.summary["n_samples"].get<Index>(), 300);
  EXPECT_EQ(rep.summary["accepted_updates"].get<Index>(), 0);
}

TEST(CustomSample, GuidedRunTracks) {
  CustomSampleConfig cfg;
  cfg.n_samples = 50;
  cfg.sampling.steps = 30;
  const auto rep = run_custom_sample(cfg, 8);
  EXPECT_EQ(rep.summary["failed_trajectories"].get<Index>(), 0);
  EXPECT_GT(rep.summary["accepted_updates"].get<Index>(), 0);
  cfg.method = "bogus";
  EXPECT_THROW(run_custom_sample(cfg, 8), ContractViolation);
}
