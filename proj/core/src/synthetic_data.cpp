#include "gmmlab/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gmmlab/errors.hpp"

namespace gmmlab {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

void check_weights(const std::vector<double>& weights, const char* field) {
  if (weights.empty()) throw ParameterError(field, "must be nonempty");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ParameterError(field, "must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw ParameterError(field, "must sum to 1");
}

std::vector<double> normalized(std::vector<double> w) {
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= sum;
  return w;
}

}  // namespace

MixtureDistribution::MixtureDistribution(std::vector<double> weights, std::vector<Vec> means,
                                         std::vector<Mat> covariances, std::vector<int> labels)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)),
      labels_(std::move(labels)) {
  check_weights(weights_, "weights");
  if (means_.size() != weights_.size() || covs_.size() != weights_.size())
    throw ParameterError("means", "component count mismatch");
  if (!labels_.empty() && labels_.size() != weights_.size())
    throw ParameterError("labels", "component count mismatch");
  dim_ = means_.front().size();
  if (dim_ < 1) throw ParameterError("means", "dimension must be >= 1");
  chol_.reserve(size());
  log_dets_.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    if (means_[i].size() != dim_) throw ParameterError("means", "dimension mismatch");
    if (covs_[i].rows() != dim_ || covs_[i].cols() != dim_)
      throw ParameterError("covariances", "dimension mismatch");
    if (!covs_[i].isApprox(covs_[i].transpose(), 1e-12))
      throw ParameterError("covariances", "must be symmetric");
    Eigen::LLT<Mat> llt(covs_[i]);
    if (llt.info() != Eigen::Success) throw ParameterError("covariances", "must be positive definite");
    Mat l = llt.matrixL();
    if ((l.diagonal().array() <= 0.0).any()) throw ParameterError("covariances", "must be positive definite");
    log_dets_.push_back(2.0 * l.diagonal().array().log().sum());
    chol_.push_back(std::move(l));
  }
}

MixtureDistribution MixtureDistribution::diagonal(std::vector<double> weights, std::vector<Vec> means,
                                                  const std::vector<Vec>& variances, std::vector<int> labels) {
  std::vector<Mat> covs;
  covs.reserve(variances.size());
  for (const Vec& v : variances) covs.push_back(v.asDiagonal());
  return MixtureDistribution(std::move(weights), std::move(means), std::move(covs), std::move(labels));
}

bool MixtureDistribution::has_label(int label) const {
  return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

Vec MixtureDistribution::exact_mean() const {
  Vec m = Vec::Zero(dim_);
  for (std::size_t i = 0; i < size(); ++i) m += weights_[i] * means_[i];
  return m;
}

Mat MixtureDistribution::exact_covariance() const {
  const Vec m = exact_mean();
  Mat c = Mat::Zero(dim_, dim_);
  for (std::size_t i = 0; i < size(); ++i) {
    const Vec d = means_[i] - m;
    c += weights_[i] * (covs_[i] + d * d.transpose());
  }
  return c;
}

Vec MixtureDistribution::component_log_joint(const Vec& x) const {
  if (x.size() != dim_) throw ParameterError("x", "dimension mismatch");
  Vec out(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    const Vec z = chol_[i].triangularView<Eigen::Lower>().solve(x - means_[i]);
    out[static_cast<Eigen::Index>(i)] =
        std::log(weights_[i]) - 0.5 * (static_cast<double>(dim_) * kLog2Pi + log_dets_[i] + z.squaredNorm());
  }
  return out;
}

double MixtureDistribution::log_density(const Vec& x) const { return log_sum_exp(component_log_joint(x)); }

Batch MixtureDistribution::sample(std::size_t count, RngStream& rng) const {
  Batch out(dim_, static_cast<Eigen::Index>(count));
  const Eigen::Map<const Vec> w(weights_.data(), static_cast<Eigen::Index>(weights_.size()));
  for (std::size_t n = 0; n < count; ++n) {
    const auto i = static_cast<std::size_t>(rng.categorical(w));
    out.col(static_cast<Eigen::Index>(n)) = means_[i] + chol_[i] * rng.normal_vector(dim_);
  }
  return out;
}

MixtureDistribution MixtureDistribution::restricted_to(int label) const {
  if (!has_labels()) throw ParameterError("label", "distribution has no labels");
  std::vector<double> w;
  std::vector<Vec> m;
  std::vector<Mat> c;
  std::vector<int> l;
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels_[i] != label) continue;
    w.push_back(weights_[i]);
    m.push_back(means_[i]);
    c.push_back(covs_[i]);
    l.push_back(label);
  }
  if (w.empty()) throw ParameterError("label", "unknown label " + std::to_string(label));
  return MixtureDistribution(normalized(std::move(w)), std::move(m), std::move(c), std::move(l));
}

PointCloud::PointCloud(Batch points, std::vector<double> weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.cols() < 1 || points_.rows() < 1) throw ParameterError("points", "need at least one point");
  if (static_cast<std::size_t>(points_.cols()) != weights_.size())
    throw ParameterError("weights", "point count mismatch");
  check_weights(weights_, "weights");
}

PointCloud::PointCloud(Batch points)
    : PointCloud(points, std::vector<double>(static_cast<std::size_t>(points.cols()),
                                             1.0 / static_cast<double>(std::max<Eigen::Index>(points.cols(), 1)))) {}

Vec PointCloud::exact_mean() const {
  Vec m = Vec::Zero(dim());
  for (std::size_t i = 0; i < size(); ++i) m += weights_[i] * points_.col(static_cast<Eigen::Index>(i));
  return m;
}

Mat PointCloud::exact_covariance() const {
  const Vec m = exact_mean();
  Mat c = Mat::Zero(dim(), dim());
  for (std::size_t i = 0; i < size(); ++i) {
    const Vec d = points_.col(static_cast<Eigen::Index>(i)) - m;
    c += weights_[i] * d * d.transpose();
  }
  return c;
}

Batch PointCloud::sample(std::size_t count, RngStream& rng) const {
  Batch out(dim(), static_cast<Eigen::Index>(count));
  const Eigen::Map<const Vec> w(weights_.data(), static_cast<Eigen::Index>(weights_.size()));
  for (std::size_t n = 0; n < count; ++n) out.col(static_cast<Eigen::Index>(n)) = points_.col(rng.categorical(w));
  return out;
}

Eigen::Index dim_of(const DataDistribution& dist) {
  return std::visit([](const auto& d) { return d.dim(); }, dist);
}

Batch sample(const DataDistribution& dist, std::size_t count, RngStream& rng) {
  return std::visit([&](const auto& d) { return d.sample(count, rng); }, dist);
}

MixtureDistribution noisy_marginal(const MixtureDistribution& dist, const Schedule& schedule, int t) {
  if (t < 1 || t > schedule.total_steps()) throw ParameterError("t", "must lie in [1, T]");
  const double a = schedule.alpha(t);
  const double sa = std::sqrt(a);
  const Eigen::Index d = dist.dim();
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    means.push_back(sa * dist.mean(i));
    covs.push_back(a * dist.covariance(i) + (1.0 - a) * Mat::Identity(d, d));
  }
  return MixtureDistribution(dist.weights(), std::move(means), std::move(covs), dist.labels());
}

MixtureDistribution noisy_marginal(const PointCloud& cloud, const Schedule& schedule, int t) {
  if (t < 1 || t > schedule.total_steps()) throw ParameterError("t", "must lie in [1, T]");
  const double a = schedule.alpha(t);
  const double sa = std::sqrt(a);
  const Eigen::Index d = cloud.dim();
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    means.push_back(sa * cloud.points().col(static_cast<Eigen::Index>(i)));
    covs.push_back((1.0 - a) * Mat::Identity(d, d));
  }
  return MixtureDistribution(cloud.weights(), std::move(means), std::move(covs));
}

namespace {

MixtureDistribution isotropic_from_2d(const std::vector<std::pair<double, double>>& centers, double variance,
                                      std::vector<int> labels, int dim) {
  if (dim < 2) throw ParameterError("dim", "built-in distributions need dim >= 2");
  const std::size_t n = centers.size();
  std::vector<Vec> means;
  std::vector<Vec> vars;
  for (const auto& [x, y] : centers) {
    Vec m = Vec::Zero(dim);
    m[0] = x;
    m[1] = y;
    means.push_back(std::move(m));
    vars.push_back(Vec::Constant(dim, variance));
  }
  return MixtureDistribution::diagonal(std::vector<double>(n, 1.0 / static_cast<double>(n)), std::move(means),
                                       vars, std::move(labels));
}

}  // namespace

MixtureDistribution ring8(int dim) {
  std::vector<std::pair<double, double>> c;
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) {
    const double th = 2.0 * std::numbers::pi * i / 8.0;
    c.emplace_back(std::cos(th), std::sin(th));
    labels.push_back(i);
  }
  return isotropic_from_2d(c, 0.01, std::move(labels), dim);
}

MixtureDistribution grid25(int dim) {
  std::vector<std::pair<double, double>> c;
  std::vector<int> labels;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      c.emplace_back(i - 2.0, j - 2.0);
      labels.push_back(i * 5 + j);
    }
  return isotropic_from_2d(c, 0.01, std::move(labels), dim);
}

MixtureDistribution two_moons_gmm(int dim) {
  std::vector<std::pair<double, double>> c;
  std::vector<int> labels;
  for (int i = 0; i < 5; ++i) {
    const double th = std::numbers::pi * i / 4.0;
    c.emplace_back(std::cos(th), std::sin(th));
    labels.push_back(0);
  }
  for (int i = 0; i < 5; ++i) {
    const double th = std::numbers::pi * i / 4.0;
    c.emplace_back(1.0 - std::cos(th), 0.5 - std::sin(th));
    labels.push_back(1);
  }
  return isotropic_from_2d(c, 0.01, std::move(labels), dim);
}

MixtureDistribution builtin_distribution(const std::string& name, int dim) {
  if (name == "ring8") return ring8(dim);
  if (name == "grid25") return grid25(dim);
  if (name == "two_moons_gmm") return two_moons_gmm(dim);
  throw ParameterError("data.name", "unknown distribution '" + name + "'");
}

MixtureDistribution parse_component_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Vec> vars;
  std::vector<int> labels;
  long expected_cols = -1;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::vector<double> vals;
    double v = 0.0;
    while (row >> v) vals.push_back(v);
    if (!row.eof()) throw ParameterError("component_table", "non-numeric entry on line " + std::to_string(line_no));
    if (vals.empty()) continue;
    const long cols = static_cast<long>(vals.size());
    if (expected_cols < 0) expected_cols = cols;
    if (cols != expected_cols)
      throw ParameterError("component_table", "inconsistent column count on line " + std::to_string(line_no));
    if (cols < 3) throw ParameterError("component_table", "row needs weight, mean and variance columns");
    const bool labeled = (cols - 1) % 2 == 1;
    const long d = (cols - 1 - (labeled ? 1 : 0)) / 2;
    weights.push_back(vals[0]);
    means.push_back(Eigen::Map<const Vec>(vals.data() + 1, d));
    vars.push_back(Eigen::Map<const Vec>(vals.data() + 1 + d, d));
    if (labeled) labels.push_back(static_cast<int>(vals.back()));
  }
  if (weights.empty()) throw ParameterError("component_table", "no components");
  for (double w : weights)
    if (!(w > 0.0)) throw ParameterError("component_table", "weights must be positive");
  return MixtureDistribution::diagonal(normalized(std::move(weights)), std::move(means), vars, std::move(labels));
}

MixtureDistribution load_component_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("data.table", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_component_table(ss.str());
}

}  // namespace gmmlab
