#include <gtest/gtest.h>

#include <cmath>

#include "freehunch/metrics.hpp"
#include "support.hpp"

using namespace freehunch;

namespace {

Matrix gaussian_samples(Rng& rng, Index n, double mx, double my) {
  Matrix s(n, 2);
  for (Index i = 0; i < n; ++i) {
    const Vector z = standard_normal(rng, 2);
    s(i, 0) = z(0) + mx;
    s(i, 1) = z(1) + my;
  }
  return s;
}

// JSD in bits between N(0,1) and N(d,1), by quadrature
double jsd_shifted_normals(double d) {
  auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI); };
  double sum = 0.0;
  const double h = 1e-4;
  for (double x = -12.0; x <= 12.0 + d; x += h) {
    const double p = pdf(x), q = pdf(x - d), m = 0.5 * (p + q);
    if (p > 0) sum += 0.5 * p * std::log2(p / m);
    if (q > 0) sum += 0.5 * q * std::log2(q / m);
  }
  return sum * h;
}

}  // namespace

TEST(Jsd, IdenticalSamplesGiveZero) {
  Rng rng = make_stream(60, 0);
  const Matrix s = gaussian_samples(rng, 2000, 0.0, 0.0);
  const auto r = jensen_shannon(s, s, HistogramGrid::box(2, -5.0, 5.0, 100));
  EXPECT_NEAR(r.value, 0.0, 1e-12);
  EXPECT_TRUE(r.coverage_ok);
}

TEST(Jsd, DisjointSupportsGiveOneBit) {
  Matrix a(50, 2), b(50, 2);
  a.col(0).setConstant(-3.0);
  a.col(1).setConstant(-3.0);
  b.col(0).setConstant(3.0);
  b.col(1).setConstant(3.0);
  const auto r = jensen_shannon(a, b, HistogramGrid::box(2, -5.0, 5.0, 100));
  // 1e-9 per cell over 10^4 cells keeps it a hair under 1
  EXPECT_NEAR(r.value, 1.0, 1e-4);
  EXPECT_LE(r.value, 1.0);
}

TEST(Jsd, DiscreteHandExample) {
  Vector p(2), q(2);
  p << 1.0, 0.0;
  q << 0.5, 0.5;
  // 0.5 (log2(1/0.75)) + 0.5 (0.5 log2(0.5/0.75) + 0.5 log2(0.5/0.25))
  const double expected = 0.5 * std::log2(1 / 0.75) + 0.25 * std::log2(0.5 / 0.75) + 0.25;
  EXPECT_NEAR(jensen_shannon(p, q), expected, 1e-15);
}

TEST(Jsd, ShiftedNormalsAgainstQuadrature) {
  Rng rng = make_stream(61, 0);
  const Index n = 1000000;
  Matrix a(n, 1), b(n, 1);
  for (Index i = 0; i < n; ++i) {
    const Vector z = standard_normal(rng, 2);
    a(i, 0) = z(0);
    b(i, 0) = z(1) + 3.0;
  }
  const auto r = jensen_shannon(a, b, HistogramGrid::box(1, -6.0, 9.0, 200));
  EXPECT_NEAR(r.value, jsd_shifted_normals(3.0), 0.01);
}

TEST(Jsd, SymmetricAndBounded) {
  Rng rng = make_stream(62, 0);
  const auto grid = HistogramGrid::box(2, -5.0, 5.0, 40);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix a = gaussian_samples(rng, 500, fhtest::uniform(rng, -2, 2), 0.0);
    const Matrix b = gaussian_samples(rng, 700, 0.0, fhtest::uniform(rng, -2, 2));
    const double ab = jensen_shannon(a, b, grid).value;
    const double ba = jensen_shannon(b, a, grid).value;
    EXPECT_NEAR(ab, ba, 1e-14);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Jsd, CoverageFlag) {
  Matrix a = Matrix::Zero(100, 2);
  a.topRows(5).setConstant(50.0);
  const auto r = jensen_shannon(a, Matrix::Zero(10, 2), HistogramGrid::box(2, -5.0, 5.0, 10));
  EXPECT_NEAR(r.coverage_a, 0.95, 1e-15);
  EXPECT_EQ(r.coverage_b, 1.0);
  EXPECT_FALSE(r.coverage_ok);
}

TEST(Histogram, CellsAndEdges) {
  const auto grid = HistogramGrid::box(2, 0.0, 1.0, 2);
  Matrix s(4, 2);
  s << 0.1, 0.1,   // cell 0
      0.1, 0.9,    // cell 1
      1.0, 1.0,    // upper edge belongs to the last cell
      0.7, 0.2;    // cell 2
  grid.validate();
  const auto h = histogram(s, grid);
  Vector expected = Vector::Constant(4, 0.25).array() + grid.epsilon;
  expected /= expected.sum();
  EXPECT_LT((h.probabilities - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(grid.locate((Eigen::RowVectorXd(2) << -0.1, 0.5).finished()), -1);
  EXPECT_EQ(grid.locate((Eigen::RowVectorXd(2) << 0.7, 0.9).finished()), 3);
  EXPECT_THROW(histogram(Matrix(0, 2), grid), ContractViolation);
  EXPECT_THROW(histogram(Matrix::Zero(3, 3), grid), ContractViolation);
  HistogramGrid bad = grid;
  bad.hi[1] = -1.0;
  EXPECT_THROW(bad.validate(), ContractViolation);
}

TEST(Frobenius, Examples) {
  const DenseSymMatrix truth = DenseSymMatrix::identity(2);
  EXPECT_EQ(frobenius_error(CovarianceBackend{DenseSymMatrix::identity(2)}, truth), 0.0);
  EXPECT_NEAR(frobenius_error(CovarianceBackend{DenseSymMatrix::identity(2, 2.0)}, truth), std::sqrt(2.0), 1e-15);
  // low-rank estimate I + e1 e1^T against I: error 1
  const Matrix u = Vector::Unit(2, 0);
  const Covariance lr{LowRankDiagMatrix::from_real(Vector::Ones(2), u, Matrix(2, 0)), nullptr};
  EXPECT_NEAR(frobenius_error(lr, truth), 1.0, 1e-15);
  EXPECT_THROW(frobenius_error(CovarianceBackend{DenseSymMatrix::identity(3)}, truth), ContractViolation);
}

TEST(MeanCoordinateStd, HandAndMonteCarlo) {
  Matrix s(3, 2);
  s << 1.0, 0.0,
      2.0, 0.0,
      3.0, 3.0;
  // stds 1 and sqrt(3)
  EXPECT_NEAR(mean_coordinate_std(s), 0.5 * (1.0 + std::sqrt(3.0)), 1e-15);
  Rng rng = make_stream(63, 0);
  Matrix g(100000, 3);
  for (Index i = 0; i < g.rows(); ++i) g.row(i) = (Vector(3) << 0.5, 1.0, 2.0).finished().cwiseProduct(standard_normal(rng, 3)).transpose();
  EXPECT_NEAR(mean_coordinate_std(g), 3.5 / 3.0, 0.01);
  EXPECT_THROW(mean_coordinate_std(Matrix::Zero(1, 2)), InsufficientDataError);
}
