#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gmmlab/rng.hpp"
#include "gmmlab/types.hpp"

namespace gmmlab {

/// How the mixture offsets were constructed.
///
/// `explicit_offsets` covers parameter sets built directly from caller-given
/// offsets (used by the oracles); sampling treats it like `rand`.
enum class KernelScheme { rand, ortho, ortho_vub, explicit_offsets };

std::string to_string(KernelScheme scheme);
/// Accepts "gmm_rand"/"rand", "gmm_ortho"/"ortho", "gmm_ortho_vub"/"ortho_vub".
KernelScheme parse_kernel_scheme(const std::string& name);

/// Mixture parameters of one reverse transition: priors pi^k, mean offsets
/// delta^k and the diagonal surrogate of the covariance offsets Delta^k.
///
/// Column k of `deltas` and `cov_diag_offsets` belongs to component k. For
/// `rand`/`ortho` the surrogate is the literal diagonal of
///   Delta^k = 1/(K pi^k) * sum_l pi^l delta^l delta^l^T
/// in the standard basis. For `ortho_vub` it holds eigenvalue upper bounds in
/// the rotated frame whose first K axes are the columns of `frame`.
struct GmmKernelParams {
  Vec priors;
  Mat deltas;
  KernelScheme scheme = KernelScheme::rand;
  double scale = 0.0;
  Mat cov_diag_offsets;
  /// D x K orthonormal basis (ortho and ortho_vub only).
  std::optional<Mat> frame;
  bool shared_across_steps = false;

  Eigen::Index dim() const noexcept { return deltas.rows(); }
  Eigen::Index components() const noexcept { return deltas.cols(); }

  /// Full D x D covariance offset of component k.
  Mat covariance_offset(Eigen::Index k) const;

  /// Offsets built from caller-given priors and deltas (no constraint check),
  /// with standard-basis diagonal surrogates.
  static GmmKernelParams from_offsets(Vec priors, Mat deltas);
};

/// Uniform priors of length K.
Vec uniform_priors(Eigen::Index components);

GmmKernelParams make_rand(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale,
                          RngStream& rng);
GmmKernelParams make_ortho(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale,
                           RngStream& rng);
GmmKernelParams make_ortho_vub(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale,
                               RngStream& rng);
GmmKernelParams make_kernel(KernelScheme scheme, Eigen::Index dimension, Eigen::Index components, const Vec& priors,
                            double scale, RngStream& rng);

/// Eigenvalue brackets of Delta^k's K nonzero-frame eigenvalues, ascending.
/// With p the priors sorted ascending and c = s^2/(K pi^k):
///   lambda_1 in c [p_1 - sum p^2, p_1],  lambda_i in c [p_{i-1}, p_i].
std::vector<std::pair<double, double>> eigenvalue_brackets(const Vec& priors, Eigen::Index k, double scale);

/// Per-component variances max(0, sigma^2 - offset) plus the number of
/// coordinates where the offset exceeded sigma^2. No renormalization.
struct ClippedVariances {
  Mat variances;  // D x K, same frame as cov_diag_offsets
  int clipped = 0;
};

ClippedVariances clip_variances(double sigma_sq, const GmmKernelParams& params);

/// Per-coordinate standard deviations of component k at noise level sigma.
/// Coordinates with a zero offset return sigma itself, so an all-zero kernel
/// reproduces the plain Gaussian step bit for bit.
Vec component_stddev(double sigma, const GmmKernelParams& params, Eigen::Index k, int* clipped = nullptr);

/// One parameter set per reverse step (index j-1 for step j), or a single
/// shared set.
using KernelBank = std::vector<GmmKernelParams>;

struct KernelBankSpec {
  KernelScheme scheme = KernelScheme::ortho_vub;
  Eigen::Index dimension = 0;
  Eigen::Index components = 8;
  Vec priors;  // empty = uniform
  double scale = 1.0;
  bool share_across_steps = false;
};

/// `steps` entries drawn from rng.split(j) for j = 1..steps, or one entry from
/// rng.split(0) when shared.
KernelBank build_kernel_bank(const KernelBankSpec& spec, int steps, RngStream& rng);

const GmmKernelParams& kernel_for_step(const KernelBank& bank, int j);

struct ConstraintReport {
  double prior_sum_residual = 0.0;
  double mean_residual = 0.0;        // max_j |sum_k pi^k delta^k_j|
  double covariance_residual = 0.0;  // max entry of sum_k pi^k (delta delta^T - Delta^k)
  double diagonal_residual = 0.0;    // surrogate vs diag(Delta^k), rand/ortho only
  int bound_violations = 0;          // eigenvalues outside brackets, VUB entries above bounds
  double max_bound_excess = 0.0;
  bool pass = false;
};

/// Checks every constraint against materialized Delta^k and an explicit
/// eigendecomposition. Never throws on violations.
ConstraintReport validate_constraints(const GmmKernelParams& params);

}  // namespace gmmlab
