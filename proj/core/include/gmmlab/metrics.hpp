#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gmmlab/rng.hpp"
#include "gmmlab/synthetic_data.hpp"
#include "gmmlab/types.hpp"

namespace gmmlab {

/// Population (1/n) covariance of a D x N batch.
Mat population_covariance(const Batch& x);

struct MomentErrors {
  double mean_err = 0.0;  // infinity norm
  double cov_err = 0.0;   // Frobenius norm
};

MomentErrors moment_errors(const Batch& x, const Vec& mean, const Mat& cov);
MomentErrors moment_errors(const Batch& x, const MixtureDistribution& dist);

/// Median pairwise Euclidean distance of the pooled set. Pools larger than
/// `max_points` are thinned to an evenly strided subset of the
/// lexicographically sorted points, which keeps the result independent of
/// batch order.
double median_bandwidth(const Batch& x, const Batch& y, std::size_t max_points = 1024);

/// Unbiased MMD^2 with k(a, b) = exp(-|a - b|^2 / (2 h^2)); nullopt uses the
/// median heuristic. Throws ParameterError when either batch has fewer than
/// two columns or the dimensions differ.
double mmd_squared(const Batch& x, const Batch& y, std::optional<double> bandwidth = std::nullopt);

/// Squared 1-D Wasserstein-2 distance between two empirical distributions,
/// integrating the difference of their quantile functions exactly.
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

/// Mean over `projections` random unit directions of the squared 1-D W2
/// between the projected batches.
double sliced_wasserstein2(const Batch& x, const Batch& y, int projections, RngStream& rng);

/// Mean log-density of the columns of `x` under `dist`.
double average_loglik(const Batch& x, const MixtureDistribution& dist);

struct MetricsOptions {
  std::optional<double> mmd_bandwidth;  // nullopt = median heuristic
  int swd_projections = 128;
};

struct MetricsReport {
  double moment_mean_err = 0.0;
  double moment_cov_err = 0.0;
  double mmd2 = 0.0;
  double sliced_w2 = 0.0;
  double avg_loglik = 0.0;
  std::uint64_t seed = 0;
};

/// All metrics of `samples` against an exact reference draw and the true
/// distribution. Projection directions come from `projection_seed`.
MetricsReport evaluate_samples(const Batch& samples, const Batch& reference, const MixtureDistribution& truth,
                               const MetricsOptions& options, std::uint64_t projection_seed);

}  // namespace gmmlab
