#include "gmmlab/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "gmmlab/errors.hpp"

namespace gmmlab {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kJitter = 1e-12;

/// Softmax over entries where mask is set; others get 0.
Vec masked_softmax(const Vec& logits, const std::vector<char>& mask) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) m = std::max(m, logits[i]);
  Vec r = Vec::Zero(logits.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    r[i] = std::exp(logits[i] - m);
    sum += r[i];
  }
  return r / sum;
}

double masked_log_sum_exp(const Vec& logits, const std::vector<char>& mask) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) sum += std::exp(logits[i] - m);
  return m + std::log(sum);
}

}  // namespace

Vec predicted_x0(const Vec& x_t, const Vec& eps, double alpha_t) {
  return (x_t - std::sqrt(1.0 - alpha_t) * eps) / std::sqrt(alpha_t);
}

struct ExactDenoiser::StepCache {
  double alpha = 1.0;
  std::vector<Vec> means;
  std::vector<double> log_weights;
  // Mixture data: one precision matrix per component. Point clouds: shared scalar variance.
  std::vector<Mat> precision;
  std::vector<double> log_dets;
  double cloud_variance = 0.0;
};

ExactDenoiser::ExactDenoiser(DataDistribution data, Schedule schedule)
    : data_(std::move(data)), schedule_(std::move(schedule)),
      once_(std::make_unique<std::once_flag[]>(static_cast<std::size_t>(schedule_.total_steps()) + 1)),
      caches_(static_cast<std::size_t>(schedule_.total_steps()) + 1) {}

ExactDenoiser::~ExactDenoiser() = default;

const ExactDenoiser::StepCache& ExactDenoiser::cache(int t) const {
  if (t < 1 || t > schedule_.total_steps()) throw ParameterError("t", "step " + std::to_string(t) + " out of [1, T]");
  const auto idx = static_cast<std::size_t>(t);
  std::call_once(once_[idx], [&] {
    auto c = std::make_unique<StepCache>();
    const double a = schedule_.alpha(t);
    const double sa = std::sqrt(a);
    c->alpha = a;
    if (const auto* mix = std::get_if<MixtureDistribution>(&data_)) {
      const Eigen::Index d = mix->dim();
      for (std::size_t i = 0; i < mix->size(); ++i) {
        c->means.push_back(sa * mix->mean(i));
        c->log_weights.push_back(std::log(mix->weight(i)));
        Mat cov = a * mix->covariance(i) + (1.0 - a) * Mat::Identity(d, d);
        Eigen::LLT<Mat> llt(cov);
        if (llt.info() != Eigen::Success) llt.compute(cov + kJitter * Mat::Identity(d, d));
        const Mat l = llt.matrixL();
        c->log_dets.push_back(2.0 * l.diagonal().array().log().sum());
        Mat p = llt.solve(Mat::Identity(d, d));
        c->precision.push_back(0.5 * (p + p.transpose()));
      }
    } else {
      const auto& cloud = std::get<PointCloud>(data_);
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        c->means.push_back(sa * cloud.points().col(static_cast<Eigen::Index>(i)));
        c->log_weights.push_back(std::log(cloud.weights()[i]));
      }
      c->cloud_variance = std::max(1.0 - a, kJitter);
    }
    caches_[idx] = std::move(c);
  });
  return *caches_[idx];
}

ExactDenoiser::Evaluation ExactDenoiser::evaluate(const Vec& x_t, int t) const {
  const StepCache& c = cache(t);
  const Eigen::Index d = dim();
  if (x_t.size() != d) throw ParameterError("x_t", "dimension mismatch");
  const std::size_t n = c.means.size();
  Evaluation ev;
  ev.log_joint.resize(static_cast<Eigen::Index>(n));
  ev.score.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec diff = x_t - c.means[i];
    if (c.precision.empty()) {
      const double v = c.cloud_variance;
      ev.log_joint[static_cast<Eigen::Index>(i)] =
          c.log_weights[i] - 0.5 * (static_cast<double>(d) * (kLog2Pi + std::log(v)) + diff.squaredNorm() / v);
      ev.score.push_back(-diff / v);
    } else {
      Vec g = c.precision[i] * diff;
      ev.log_joint[static_cast<Eigen::Index>(i)] =
          c.log_weights[i] - 0.5 * (static_cast<double>(d) * kLog2Pi + c.log_dets[i] + diff.dot(g));
      ev.score.push_back(-std::move(g));
    }
  }
  return ev;
}

std::vector<char> ExactDenoiser::label_mask(std::optional<int> label) const {
  std::size_t n = 0;
  const MixtureDistribution* mix = std::get_if<MixtureDistribution>(&data_);
  n = mix ? mix->size() : std::get<PointCloud>(data_).size();
  if (!label) return std::vector<char>(n, 1);
  if (!mix || !mix->has_labels()) throw ParameterError("label", "data carries no class labels");
  if (!mix->has_label(*label)) throw ParameterError("label", "unknown label " + std::to_string(*label));
  std::vector<char> mask(n, 0);
  for (std::size_t i = 0; i < n; ++i) mask[i] = mix->label(i) == *label ? 1 : 0;
  return mask;
}

Vec ExactDenoiser::score(const Vec& x_t, int t, std::optional<int> label) const {
  if (!label) {
    const StepCache& c = cache(t);
    if (c.means.size() == 1 && !c.precision.empty()) {
      if (x_t.size() != dim()) throw ParameterError("x_t", "dimension mismatch");
      return -(c.precision.front() * (x_t - c.means.front()));
    }
  }
  const std::vector<char> mask = label_mask(label);
  const Evaluation ev = evaluate(x_t, t);
  const Vec r = masked_softmax(ev.log_joint, mask);
  Vec s = Vec::Zero(dim());
  for (std::size_t i = 0; i < ev.score.size(); ++i)
    if (mask[i]) s += r[static_cast<Eigen::Index>(i)] * ev.score[i];
  return s;
}

Vec ExactDenoiser::epsilon(const Vec& x_t, int t, std::optional<int> label) const {
  const double a = schedule_.alpha(t);
  if (1.0 - a <= 0.0) throw SingularStepError("alpha_cum == 1 at step " + std::to_string(t));
  return -std::sqrt(1.0 - a) * score(x_t, t, label);
}

Vec ExactDenoiser::posterior_mean(const Vec& x_t, int t) const {
  const double a = schedule_.alpha(t);
  return predicted_x0(x_t, epsilon(x_t, t), a);
}

std::vector<std::pair<int, double>> ExactDenoiser::class_posterior(const Vec& x_t, int t) const {
  const auto* mix = std::get_if<MixtureDistribution>(&data_);
  if (!mix || !mix->has_labels()) throw ParameterError("label", "data carries no class labels");
  const Evaluation ev = evaluate(x_t, t);
  const Vec r = masked_softmax(ev.log_joint, std::vector<char>(mix->size(), 1));
  std::vector<std::pair<int, double>> out;
  for (std::size_t i = 0; i < mix->size(); ++i) {
    const int y = mix->label(i);
    auto it = std::find_if(out.begin(), out.end(), [y](const auto& p) { return p.first == y; });
    if (it == out.end()) {
      out.emplace_back(y, 0.0);
      it = std::prev(out.end());
    }
    it->second += r[static_cast<Eigen::Index>(i)];
  }
  return out;
}

double ExactDenoiser::class_log_posterior(const Vec& x_t, int t, int label) const {
  const std::vector<char> mask = label_mask(label);
  const Evaluation ev = evaluate(x_t, t);
  return masked_log_sum_exp(ev.log_joint, mask) -
         masked_log_sum_exp(ev.log_joint, std::vector<char>(mask.size(), 1));
}

Vec ExactDenoiser::class_log_posterior_gradient(const Vec& x_t, int t, int label) const {
  const std::vector<char> mask = label_mask(label);
  const Evaluation ev = evaluate(x_t, t);
  const Vec r_all = masked_softmax(ev.log_joint, std::vector<char>(mask.size(), 1));
  const Vec r_cls = masked_softmax(ev.log_joint, mask);
  Vec g = Vec::Zero(dim());
  for (std::size_t i = 0; i < ev.score.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    g += (r_cls[k] - r_all[k]) * ev.score[i];
  }
  return g;
}

std::string to_string(GuidanceConfig::Mode mode) {
  switch (mode) {
    case GuidanceConfig::Mode::none: return "none";
    case GuidanceConfig::Mode::classifier: return "classifier";
    case GuidanceConfig::Mode::classifier_free: return "classifier_free";
  }
  return "none";
}

GuidanceConfig::Mode parse_guidance_mode(const std::string& name) {
  if (name == "none") return GuidanceConfig::Mode::none;
  if (name == "classifier") return GuidanceConfig::Mode::classifier;
  if (name == "classifier_free" || name == "cfg") return GuidanceConfig::Mode::classifier_free;
  throw ParameterError("guidance.mode", "unknown mode '" + name + "'");
}

void validate_guidance(const GuidanceConfig& cfg, const ExactDenoiser& analytic) {
  if (!(cfg.scale >= 0.0)) throw ParameterError("guidance.scale", "must be >= 0");
  if (cfg.mode == GuidanceConfig::Mode::none) return;
  const auto* mix = std::get_if<MixtureDistribution>(&analytic.data());
  if (!mix || !mix->has_labels()) throw ParameterError("guidance.label", "data carries no class labels");
  if (!mix->has_label(cfg.target_label))
    throw ParameterError("guidance.label", "unknown label " + std::to_string(cfg.target_label));
}

Vec guided_epsilon(const EpsilonEstimator& base, const ExactDenoiser& analytic, const Vec& x_t, int t,
                   const GuidanceConfig& cfg) {
  switch (cfg.mode) {
    case GuidanceConfig::Mode::none:
      return base.epsilon(x_t, t);
    case GuidanceConfig::Mode::classifier: {
      const double a = analytic.schedule().alpha(t);
      return base.epsilon(x_t, t) -
             cfg.scale * std::sqrt(1.0 - a) * analytic.class_log_posterior_gradient(x_t, t, cfg.target_label);
    }
    case GuidanceConfig::Mode::classifier_free: {
      const Vec uncond = base.epsilon(x_t, t);
      const Vec cond = analytic.epsilon(x_t, t, cfg.target_label);
      return (1.0 - cfg.scale) * uncond + cfg.scale * cond;
    }
  }
  return base.epsilon(x_t, t);
}

GuidedEstimator::GuidedEstimator(const EpsilonEstimator& base, const ExactDenoiser& analytic, GuidanceConfig cfg)
    : base_(base), analytic_(analytic), cfg_(cfg) {
  validate_guidance(cfg_, analytic_);
}

Vec GuidedEstimator::epsilon(const Vec& x_t, int t, std::optional<int> /*label*/) const {
  return guided_epsilon(base_, analytic_, x_t, t, cfg_);
}

}  // namespace gmmlab
