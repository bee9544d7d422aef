#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gmmlab/errors.hpp"
#include "gmmlab/metrics.hpp"
#include "gmmlab/synthetic_data.hpp"

using namespace gmmlab;

namespace {

Batch gaussian_batch(Eigen::Index d, Eigen::Index n, double shift, std::uint64_t seed) {
  RngStream rng(seed);
  Batch x(d, n);
  for (Eigen::Index c = 0; c < n; ++c) x.col(c) = rng.normal_vector(d);
  x.row(0).array() += shift;
  return x;
}

Batch permute_columns(const Batch& x, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  RngStream rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  Batch y(x.rows(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = x.col(idx[i]);
  return y;
}

}  // namespace

TEST(Mmd, TwoPointHandComputation) {
  const Batch x = (Batch(2, 2) << 0.0, 0.0, 1.0, 1.0).finished();
  const Batch y = (Batch(2, 2) << 2.0, 2.0, 1.0, 1.0).finished();
  const double h = 1.5;
  const double kxy = std::exp(-4.0 / (2.0 * h * h));
  EXPECT_NEAR(mmd_squared(x, y, h), 2.0 - 2.0 * kxy, 1e-15);
}

TEST(Mmd, SameDistributionWithinPermutationNull) {
  const Batch x = gaussian_batch(2, 300, 0.0, 1);
  const Batch y = gaussian_batch(2, 300, 0.0, 2);
  const double h = median_bandwidth(x, y);
  const double observed = mmd_squared(x, y, h);
  Batch pooled(2, 600);
  pooled << x, y;
  std::vector<double> null;
  for (std::uint64_t p = 0; p < 100; ++p) {
    const Batch perm = permute_columns(pooled, 100 + p);
    null.push_back(mmd_squared(perm.leftCols(300), perm.rightCols(300), h));
  }
  const double mean = std::accumulate(null.begin(), null.end(), 0.0) / null.size();
  double var = 0.0;
  for (double v : null) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (null.size() - 1));
  EXPECT_LE(std::abs(observed), 3.0 * sd);
}

TEST(Mmd, SeparatedDistributions) {
  const Batch x = gaussian_batch(2, 500, 0.0, 3);
  const Batch y = gaussian_batch(2, 500, 10.0, 4);
  EXPECT_GT(mmd_squared(x, y), 0.5);
}

TEST(Mmd, SymmetricAndPermutationInvariant) {
  const Batch x = gaussian_batch(3, 1500, 0.0, 5);
  const Batch y = gaussian_batch(3, 1200, 0.5, 6);
  const double a = mmd_squared(x, y);
  EXPECT_NEAR(a, mmd_squared(y, x), 1e-12);
  EXPECT_NEAR(a, mmd_squared(permute_columns(x, 1), permute_columns(y, 2)), 1e-12);
  EXPECT_EQ(median_bandwidth(x, y), median_bandwidth(permute_columns(x, 3), y));
}

TEST(Mmd, Errors) {
  const Batch one = Batch::Zero(2, 1);
  const Batch two = Batch::Zero(2, 2);
  EXPECT_THROW(mmd_squared(one, two), ParameterError);
  EXPECT_THROW(mmd_squared(two, Batch::Zero(3, 2)), ParameterError);
}

TEST(Wasserstein, PointMasses) {
  EXPECT_EQ(wasserstein2_1d({0.0}, {1.0}), 1.0);
  EXPECT_EQ(wasserstein2_1d({0.0, 2.0}, {0.0, 2.0}), 0.0);
}

TEST(Wasserstein, UnequalSizesQuantileIntegral) {
  // Quantiles: a = 0 on [0, 1/2), 1 on [1/2, 1); b = 0, 0.5, 1 on thirds.
  // Integral of (qa - qb)^2 = 1/6 * 0.25 + 1/6 * 0.25 = 1/12.
  EXPECT_NEAR(wasserstein2_1d({1.0, 0.0}, {0.5, 1.0, 0.0}), 1.0 / 12.0, 1e-15);
}

TEST(SlicedWasserstein, IdenticalBatchesGiveZero) {
  const Batch x = gaussian_batch(4, 200, 0.0, 7);
  RngStream rng(1);
  EXPECT_EQ(sliced_wasserstein2(x, x, 64, rng), 0.0);
}

TEST(SlicedWasserstein, OneDimensionalShift) {
  const Batch x = Batch::Zero(1, 1);
  const Batch y = Batch::Ones(1, 1);
  RngStream rng(1);
  EXPECT_NEAR(sliced_wasserstein2(x, y, 16, rng), 1.0, 1e-15);
}

TEST(SlicedWasserstein, SymmetricAndPermutationInvariant) {
  const Batch x = gaussian_batch(3, 400, 0.0, 8);
  const Batch y = gaussian_batch(3, 300, 1.0, 9);
  RngStream r1(2), r2(2), r3(2);
  const double a = sliced_wasserstein2(x, y, 32, r1);
  EXPECT_NEAR(a, sliced_wasserstein2(y, x, 32, r2), 1e-14);
  EXPECT_NEAR(a, sliced_wasserstein2(permute_columns(x, 4), y, 32, r3), 1e-14);
  EXPECT_GT(a, 0.0);
}

TEST(Moments, PopulationNormalization) {
  const Batch x = (Batch(1, 2) << -1.0, 1.0).finished();
  EXPECT_EQ(population_covariance(x)(0, 0), 1.0);
  const MomentErrors e = moment_errors(x, Vec::Zero(1), Mat::Identity(1, 1));
  EXPECT_EQ(e.mean_err, 0.0);
  EXPECT_EQ(e.cov_err, 0.0);
}

TEST(Moments, ZerosAgainstStandardNormal) {
  const MomentErrors e = moment_errors(Batch::Zero(3, 10), Vec::Zero(3), Mat::Identity(3, 3));
  EXPECT_EQ(e.mean_err, 0.0);
  EXPECT_NEAR(e.cov_err, std::sqrt(3.0), 1e-15);
}

TEST(Moments, ExactSamplerWithinStandardErrors) {
  const MixtureDistribution data = ring8();
  RngStream rng(11);
  const Eigen::Index n = 100000;
  const Batch x = data.sample(static_cast<std::size_t>(n), rng);
  const Mat cov = data.exact_covariance();
  const MomentErrors e = moment_errors(x, data);
  const Vec err = x.rowwise().mean() - data.exact_mean();
  for (Eigen::Index i = 0; i < 2; ++i) EXPECT_LE(std::abs(err[i]), 3.0 * std::sqrt(cov(i, i) / n));
  EXPECT_LE(e.mean_err, 3.0 * std::sqrt(cov.diagonal().maxCoeff() / n));
  // Covariance stderr from the empirical fourth moments of the centered draws.
  const Batch c = x.colwise() - data.exact_mean();
  double var_fro = 0.0;
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) {
      const Eigen::ArrayXd prod = c.row(i).array() * c.row(j).array();
      var_fro += (prod - prod.mean()).square().mean();
    }
  EXPECT_LE(e.cov_err, 3.0 * std::sqrt(var_fro / n));
}

TEST(LogLik, MatchesDistribution) {
  const MixtureDistribution data = ring8();
  RngStream rng(12);
  const Batch x = data.sample(50, rng);
  double total = 0.0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) total += data.log_density(x.col(c));
  EXPECT_NEAR(average_loglik(x, data), total / 50.0, 1e-12);
}

TEST(Evaluate, ReportIsFiniteAndSeeded) {
  const MixtureDistribution data = ring8();
  RngStream rng(13);
  const Batch samples = data.sample(400, rng);
  const Batch reference = data.sample(400, rng);
  const MetricsOptions options;
  const MetricsReport a = evaluate_samples(samples, reference, data, options, 99);
  const MetricsReport b = evaluate_samples(permute_columns(samples, 5), reference, data, options, 99);
  EXPECT_EQ(a.seed, 99u);
  EXPECT_TRUE(std::isfinite(a.mmd2) && std::isfinite(a.sliced_w2) && std::isfinite(a.avg_loglik));
  EXPECT_GE(a.sliced_w2, 0.0);
  EXPECT_NEAR(a.mmd2, b.mmd2, 1e-12);
  EXPECT_NEAR(a.sliced_w2, b.sliced_w2, 1e-12);
}
