#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gmmlab/rng.hpp"
#include "gmmlab/schedule.hpp"
#include "gmmlab/types.hpp"

namespace gmmlab {

/// Weighted Gaussian mixture over R^D. Immutable once built.
class MixtureDistribution {
 public:
  /// Weights must be positive and sum to 1 within 1e-12; every covariance must
  /// be symmetric positive definite. Labels are optional (empty = unlabeled).
  MixtureDistribution(std::vector<double> weights, std::vector<Vec> means, std::vector<Mat> covariances,
                      std::vector<int> labels = {});

  /// Diagonal covariances given as variance vectors.
  static MixtureDistribution diagonal(std::vector<double> weights, std::vector<Vec> means,
                                      const std::vector<Vec>& variances, std::vector<int> labels = {});

  Eigen::Index dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return weights_.size(); }
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const Vec& mean(std::size_t i) const { return means_[i]; }
  const Mat& covariance(std::size_t i) const { return covs_[i]; }
  /// Lower Cholesky factor of covariance(i).
  const Mat& cholesky(std::size_t i) const { return chol_[i]; }
  double log_det(std::size_t i) const { return log_dets_[i]; }

  bool has_labels() const noexcept { return !labels_.empty(); }
  int label(std::size_t i) const { return labels_.at(i); }
  const std::vector<int>& labels() const noexcept { return labels_; }
  bool has_label(int label) const;

  Vec exact_mean() const;
  /// sum_i w_i (S_i + m_i m_i^T) - m m^T, evaluated in centered form.
  Mat exact_covariance() const;

  /// log sum_i w_i N(x; m_i, S_i) with log-sum-exp stabilization.
  double log_density(const Vec& x) const;
  /// Per-component log(w_i N(x; m_i, S_i)).
  Vec component_log_joint(const Vec& x) const;

  Batch sample(std::size_t count, RngStream& rng) const;

  /// Components carrying `label`, weights renormalized. Throws ParameterError
  /// when the label is unknown.
  MixtureDistribution restricted_to(int label) const;

 private:
  Eigen::Index dim_ = 0;
  std::vector<double> weights_;
  std::vector<Vec> means_;
  std::vector<Mat> covs_;
  std::vector<Mat> chol_;
  std::vector<double> log_dets_;
  std::vector<int> labels_;
};

/// Weighted Dirac mixture q(x0) = sum_i w_i delta(x0 - x_i).
class PointCloud {
 public:
  PointCloud(Batch points, std::vector<double> weights);
  /// Uniform weights.
  explicit PointCloud(Batch points);

  Eigen::Index dim() const noexcept { return points_.rows(); }
  std::size_t size() const noexcept { return weights_.size(); }
  const Batch& points() const noexcept { return points_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  Vec exact_mean() const;
  Mat exact_covariance() const;
  Batch sample(std::size_t count, RngStream& rng) const;

 private:
  Batch points_;
  std::vector<double> weights_;
};

using DataDistribution = std::variant<MixtureDistribution, PointCloud>;

Eigen::Index dim_of(const DataDistribution& dist);
Batch sample(const DataDistribution& dist, std::size_t count, RngStream& rng);

/// Mixture of q(x_t | x0) = N(sqrt(a_t) x0, (1 - a_t) I) with the data.
MixtureDistribution noisy_marginal(const MixtureDistribution& dist, const Schedule& schedule, int t);
MixtureDistribution noisy_marginal(const PointCloud& cloud, const Schedule& schedule, int t);

/// Eight modes on the unit circle with variance 0.01. With dim > 2 the extra
/// coordinates are zero-mean with the same variance. Component i has label i.
MixtureDistribution ring8(int dim = 2);
/// 5 x 5 grid of modes at {-2,-1,0,1,2}^2, variance 0.01, labels by index.
MixtureDistribution grid25(int dim = 2);
/// Two interleaved half-circles, five modes each, variance 0.01; label = moon.
MixtureDistribution two_moons_gmm(int dim = 2);

/// Built-in by name: "ring8", "grid25", "two_moons_gmm".
MixtureDistribution builtin_distribution(const std::string& name, int dim = 2);

/// Plain-text component table: one row per component,
/// `weight m_1 .. m_D v_1 .. v_D [label]`. Blank lines and `#` comments are
/// ignored. Weights are renormalized to sum to 1.
MixtureDistribution load_component_table(const std::string& path);
MixtureDistribution parse_component_table(const std::string& text);

}  // namespace gmmlab
