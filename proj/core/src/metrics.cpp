#include "gmmlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gmmlab/errors.hpp"

namespace gmmlab {

Mat population_covariance(const Batch& x) {
  const Vec m = x.rowwise().mean();
  const Mat y = x.colwise() - m;
  return (y * y.transpose()) / static_cast<double>(x.cols());
}

MomentErrors moment_errors(const Batch& x, const Vec& mean, const Mat& cov) {
  if (x.cols() == 0) throw ParameterError("samples", "empty batch");
  if (x.rows() != mean.size()) throw ParameterError("samples", "dimension mismatch");
  return {(x.rowwise().mean() - mean).lpNorm<Eigen::Infinity>(), (population_covariance(x) - cov).norm()};
}

MomentErrors moment_errors(const Batch& x, const MixtureDistribution& dist) {
  return moment_errors(x, dist.exact_mean(), dist.exact_covariance());
}

double median_bandwidth(const Batch& x, const Batch& y, std::size_t max_points) {
  const Eigen::Index n = x.cols() + y.cols();
  std::vector<Vec> pool;
  pool.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < x.cols(); ++i) pool.emplace_back(x.col(i));
  for (Eigen::Index i = 0; i < y.cols(); ++i) pool.emplace_back(y.col(i));
  if (pool.size() > max_points) {
    std::sort(pool.begin(), pool.end(), [](const Vec& a, const Vec& b) {
      return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
    });
    std::vector<Vec> thinned;
    thinned.reserve(max_points);
    for (std::size_t i = 0; i < max_points; ++i) thinned.push_back(pool[i * pool.size() / max_points]);
    pool.swap(thinned);
  }
  std::vector<double> d;
  d.reserve(pool.size() * (pool.size() - 1) / 2);
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back((pool[i] - pool[j]).norm());
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  return med > 0.0 ? med : 1.0;
}

namespace {

// Sum of k(a_i, b_j) over all pairs, skipping i == j when `same`.
double kernel_sum(const Batch& a, const Batch& b, double gamma, bool same) {
  const Vec an = a.colwise().squaredNorm();
  const Vec bn = b.colwise().squaredNorm();
  double total = 0.0;
  constexpr Eigen::Index kBlock = 512;
  for (Eigen::Index i0 = 0; i0 < a.cols(); i0 += kBlock) {
    const Eigen::Index ni = std::min(kBlock, a.cols() - i0);
    const Mat g = a.middleCols(i0, ni).transpose() * b;
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index i = 0; i < ni; ++i) {
        if (same && i0 + i == j) continue;
        const double d2 = std::max(0.0, an[i0 + i] + bn[j] - 2.0 * g(i, j));
        total += std::exp(-gamma * d2);
      }
  }
  return total;
}

}  // namespace

double mmd_squared(const Batch& x, const Batch& y, std::optional<double> bandwidth) {
  if (x.cols() < 2 || y.cols() < 2) throw ParameterError("batch", "MMD needs at least two samples per batch");
  if (x.rows() != y.rows()) throw ParameterError("batch", "dimension mismatch");
  const double h = bandwidth ? *bandwidth : median_bandwidth(x, y);
  if (!(h > 0.0)) throw ParameterError("mmd_bandwidth", "must be > 0");
  const double gamma = 1.0 / (2.0 * h * h);
  const auto n = static_cast<double>(x.cols());
  const auto m = static_cast<double>(y.cols());
  return kernel_sum(x, x, gamma, true) / (n * (n - 1.0)) + kernel_sum(y, y, gamma, true) / (m * (m - 1.0)) -
         2.0 * kernel_sum(x, y, gamma, false) / (n * m);
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ParameterError("batch", "empty batch");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto n = a.size();
  const auto m = b.size();
  // Walk the merged breakpoints i/n and j/m of the two step quantile functions,
  // comparing cross-multiplied integers to avoid rounding.
  double total = 0.0;
  std::size_t i = 0, j = 0;
  double u = 0.0;
  while (i < n && j < m) {
    const std::size_t ni = (i + 1) * m;
    const std::size_t nj = (j + 1) * n;
    const double next = static_cast<double>(std::min(ni, nj)) / static_cast<double>(n * m);
    const double diff = a[i] - b[j];
    total += (next - u) * diff * diff;
    u = next;
    if (ni <= nj) ++i;
    if (nj <= ni) ++j;
  }
  return total;
}

double sliced_wasserstein2(const Batch& x, const Batch& y, int projections, RngStream& rng) {
  if (x.cols() == 0 || y.cols() == 0) throw ParameterError("batch", "empty batch");
  if (x.rows() != y.rows()) throw ParameterError("batch", "dimension mismatch");
  if (projections < 1) throw ParameterError("swd_projections", "must be >= 1");
  double total = 0.0;
  for (int p = 0; p < projections; ++p) {
    Vec dir = rng.normal_vector(x.rows());
    dir /= dir.norm();
    const Vec px = x.transpose() * dir;
    const Vec py = y.transpose() * dir;
    total += wasserstein2_1d(std::vector<double>(px.data(), px.data() + px.size()),
                             std::vector<double>(py.data(), py.data() + py.size()));
  }
  return total / projections;
}

double average_loglik(const Batch& x, const MixtureDistribution& dist) {
  if (x.cols() == 0) throw ParameterError("samples", "empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) total += dist.log_density(x.col(i));
  return total / static_cast<double>(x.cols());
}

MetricsReport evaluate_samples(const Batch& samples, const Batch& reference, const MixtureDistribution& truth,
                               const MetricsOptions& options, std::uint64_t projection_seed) {
  MetricsReport r;
  r.seed = projection_seed;
  const MomentErrors me = moment_errors(samples, truth);
  r.moment_mean_err = me.mean_err;
  r.moment_cov_err = me.cov_err;
  r.mmd2 = mmd_squared(samples, reference, options.mmd_bandwidth);
  RngStream rng(projection_seed);
  r.sliced_w2 = sliced_wasserstein2(samples, reference, options.swd_projections, rng);
  r.avg_loglik = average_loglik(samples, truth);
  return r;
}

}  // namespace gmmlab
