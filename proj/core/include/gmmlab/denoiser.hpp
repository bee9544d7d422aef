#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gmmlab/schedule.hpp"
#include "gmmlab/synthetic_data.hpp"
#include "gmmlab/types.hpp"

namespace gmmlab {

/// Noise predictor eps_hat(x_t, t[, label]). Implementations must be safe to
/// call concurrently.
class EpsilonEstimator {
 public:
  virtual ~EpsilonEstimator() = default;
  virtual Vec epsilon(const Vec& x_t, int t, std::optional<int> label = std::nullopt) const = 0;
  virtual Eigen::Index dim() const = 0;
};

/// x0 estimate implied by a noise prediction: (x_t - sqrt(1 - a_t) eps) / sqrt(a_t).
Vec predicted_x0(const Vec& x_t, const Vec& eps, double alpha_t);

/// Closed-form minimum-error noise predictor for mixture or point-cloud data.
///
/// For component i of the noisy marginal, N(x; sqrt(a) m_i, C_i) with
/// C_i = a S_i + (1 - a) I, the predictor is
///   eps_hat = sqrt(1 - a) * sum_i r_i C_i^{-1} (x - sqrt(a) m_i),
/// which equals -sqrt(1 - a) * grad log q_t(x). Per-step factorizations are
/// built lazily and cached; all methods are thread-safe.
class ExactDenoiser final : public EpsilonEstimator {
 public:
  ExactDenoiser(DataDistribution data, Schedule schedule);
  ~ExactDenoiser() override;

  /// With a label, the predictor of the class-restricted sub-mixture.
  Vec epsilon(const Vec& x_t, int t, std::optional<int> label = std::nullopt) const override;
  Eigen::Index dim() const override { return dim_of(data_); }

  /// grad_x log q_t(x), optionally restricted to one class.
  Vec score(const Vec& x_t, int t, std::optional<int> label = std::nullopt) const;
  /// E[x0 | x_t].
  Vec posterior_mean(const Vec& x_t, int t) const;

  /// Exact Bayes class posterior p(y | x_t) over the labels in declaration order.
  std::vector<std::pair<int, double>> class_posterior(const Vec& x_t, int t) const;
  double class_log_posterior(const Vec& x_t, int t, int label) const;
  /// grad_x log p(y | x_t).
  Vec class_log_posterior_gradient(const Vec& x_t, int t, int label) const;

  const DataDistribution& data() const noexcept { return data_; }
  const Schedule& schedule() const noexcept { return schedule_; }

 private:
  struct StepCache;
  struct Evaluation {
    Vec log_joint;           // log(w_i N_i(x))
    std::vector<Vec> score;  // -C_i^{-1}(x - m_i)
  };

  const StepCache& cache(int t) const;
  Evaluation evaluate(const Vec& x_t, int t) const;
  std::vector<char> label_mask(std::optional<int> label) const;

  DataDistribution data_;
  Schedule schedule_;
  std::unique_ptr<std::once_flag[]> once_;
  mutable std::vector<std::unique_ptr<StepCache>> caches_;
};

struct GuidanceConfig {
  enum class Mode { none, classifier, classifier_free };

  Mode mode = Mode::none;
  double scale = 0.0;
  int target_label = 0;
};

std::string to_string(GuidanceConfig::Mode mode);
GuidanceConfig::Mode parse_guidance_mode(const std::string& name);

/// Throws ParameterError unless the scale is nonnegative and, when guidance is
/// active, the data carries the target label.
void validate_guidance(const GuidanceConfig& cfg, const ExactDenoiser& analytic);

/// Guided prediction. `analytic` supplies the exact class posterior (classifier
/// mode) or the class-conditional predictor (classifier-free mode):
///   classifier:       eps - w sqrt(1 - a_t) grad log p(y | x_t)
///   classifier_free:  (1 - w) eps_uncond + w eps_cond
Vec guided_epsilon(const EpsilonEstimator& base, const ExactDenoiser& analytic, const Vec& x_t, int t,
                   const GuidanceConfig& cfg);

/// EpsilonEstimator adaptor applying guided_epsilon. Holds references; the
/// referenced estimators must outlive it.
class GuidedEstimator final : public EpsilonEstimator {
 public:
  GuidedEstimator(const EpsilonEstimator& base, const ExactDenoiser& analytic, GuidanceConfig cfg);

  Vec epsilon(const Vec& x_t, int t, std::optional<int> label = std::nullopt) const override;
  Eigen::Index dim() const override { return base_.dim(); }

 private:
  const EpsilonEstimator& base_;
  const ExactDenoiser& analytic_;
  GuidanceConfig cfg_;
};

}  // namespace gmmlab
