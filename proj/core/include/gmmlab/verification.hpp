#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gmmlab/denoiser.hpp"
#include "gmmlab/gmm_kernel.hpp"
#include "gmmlab/rng.hpp"
#include "gmmlab/schedule.hpp"
#include "gmmlab/synthetic_data.hpp"
#include "gmmlab/types.hpp"

namespace gmmlab {

/// Gaussian component whose covariance may be indefinite: the closed-form
/// recursion tracks moments even when a kernel has no density.
struct GaussianComponent {
  double weight = 0.0;
  Vec mean;
  Mat cov;
};
using ComponentMixture = std::vector<GaussianComponent>;

constexpr std::size_t kDefaultComponentCap = 4096;

/// Closed-form inference-direction marginals q(x_t | x0) at every entry of
/// schedule.tau(), index-aligned with tau. The top entry is
/// N(sqrt(a) x0, (1 - a) I); each transition tau[i] -> tau[i-1] maps a
/// component (m, C) and kernel component k to
///   mean  sqrt(a_prev) x0 + A (m - sqrt(a) x0) + delta^k
///   cov   A^2 C + sigma^2 I - Delta^k,   A = sqrt(1 - a_prev - sigma^2)/sqrt(1 - a).
/// Throws CapExceededError when the final component count would exceed `cap`.
std::vector<ComponentMixture> inference_marginals(const Vec& x0, const Schedule& schedule, const KernelBank& bank,
                                                  double eta, std::size_t cap = kDefaultComponentCap);

/// Mixture mean and covariance.
std::pair<Vec, Mat> mixture_moments(const ComponentMixture& mixture);

/// log density; throws ParameterError if a covariance is not positive definite.
double mixture_log_density(const ComponentMixture& mixture, const Vec& x);

/// Converts to a validated MixtureDistribution (positive definite covariances).
MixtureDistribution to_distribution(const ComponentMixture& mixture);

enum class MomentMethod { closed_form, monte_carlo };

struct StepMoments {
  int step = 0;
  double mean_error = 0.0;     // infinity norm vs sqrt(a_t) x0
  double mean_error_l2 = 0.0;  // Euclidean norm of the same error
  double cov_error = 0.0;      // Frobenius norm vs (1 - a_t) I
  /// Norm-level standard errors sqrt(sum se^2); zero for closed form.
  double mean_stderr = 0.0;
  double cov_stderr = 0.0;
};

struct MomentReport {
  MomentMethod method = MomentMethod::closed_form;
  /// Ordered from the top tau entry down to tau[0].
  std::vector<StepMoments> steps;
  std::size_t chains = 0;
  std::size_t components = 0;
  /// Monte Carlo only: false when some kernel covariance sigma^2 I - Delta^k is
  /// not positive semidefinite, so the kernel has no distribution to draw from.
  bool simulable = true;
  std::string note;

  /// Every step's l2 mean error and Frobenius covariance error lie within
  /// k_sigma norm-level standard errors.
  bool within(double k_sigma) const;
  double max_mean_error() const;
  double max_cov_error() const;
};

MomentReport closed_form_marginals(const Vec& x0, const Schedule& schedule, const KernelBank& bank, double eta,
                                   std::size_t cap = kDefaultComponentCap);

/// full_cov: exact kernel covariance sigma^2 I - Delta^k. diag_approx:
/// standard-basis diagonal of Delta^k, clipped. vub_clipped: eigenvalue upper
/// bounds in the orthonormal frame, clipped (needs a frame).
enum class KernelVariant { full_cov, diag_approx, vub_clipped };

std::string to_string(KernelVariant v);

MomentReport monte_carlo_marginals(const Vec& x0, const Schedule& schedule, const KernelBank& bank, double eta,
                                   KernelVariant variant, std::size_t chains, RngStream& rng);

/// Copy of `params` whose diagonal surrogate is the eigenvalue upper bound
/// placed on the frame axes (what make_ortho_vub produces).
GmmKernelParams vub_view(const GmmKernelParams& params);
/// Copy whose surrogate is the standard-basis diagonal of Delta^k.
GmmKernelParams diagonal_view(const GmmKernelParams& params);

constexpr double kNuFloor = 1e-12;

struct ElboStep {
  int step = 0;        // t = tau entry the kernel starts from
  double weight = 0.0; // w_t = (sum_k pi^k / nu^k) (1 - a_t) / (2 a_t)
  Vec nu;              // min clipped diagonal variance per component, floored
  bool degenerate = false;
};

struct ElboReport {
  std::vector<ElboStep> steps;  // reverse steps j = S..2
  double k2_coefficient = 0.0;  // (1 - a_1) / (2 sigma_1^2 a_1), a_1 at tau[0]
  bool degenerate = false;
  double total_bound = 0.0;     // filled by evaluate_elbo_bound
};

ElboReport elbo_weights(const Schedule& schedule, const KernelBank& bank, double eta, double sigma_1);

/// Monte Carlo value of the weighted bound on `x0_samples` (D x N): for each
/// step, draw a marginal component l ~ xi_t, draw x_t from it and score
/// ||eps_target - eps_hat(x_t, t)||^2 with eps_target = (x_t - sqrt(a) x0)/sqrt(1 - a).
/// Stores and returns the total in report.total_bound.
double evaluate_elbo_bound(ElboReport& report, const Schedule& schedule, const KernelBank& bank, double eta,
                           const Batch& x0_samples, const EpsilonEstimator& estimator, RngStream& rng,
                           std::size_t cap = kDefaultComponentCap);

/// Kernel covariance used by the denoising posterior.
enum class KernelCovariance { full, sampler_diagonal };

/// q(x_{t_prev} | x_t) for reverse step j under the mixture kernel, with x0
/// integrated against its exact posterior given x_t (taken from the
/// moment-matched marginal N(sqrt(a) x0, (1 - a) I)). Point clouds give N*K
/// components; mixture data give M*K.
MixtureDistribution exact_denoising_posterior(const DataDistribution& data, const Schedule& schedule,
                                              const GmmKernelParams& params, int j, double eta, const Vec& x_t,
                                              KernelCovariance covariance = KernelCovariance::full);

/// log q(x_t | x_prev, x0) for reverse step j >= 2, as the ratio
/// kernel(x_prev | x_t, x0) * marginal_t(x_t) / marginal_prev(x_prev).
double forward_conditional_logdensity(const Vec& x0, const Schedule& schedule, const KernelBank& bank, double eta,
                                      int j, const Vec& x_t, const Vec& x_prev,
                                      std::size_t cap = kDefaultComponentCap);

}  // namespace gmmlab
