#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gmmlab/denoiser.hpp"
#include "gmmlab/gmm_kernel.hpp"
#include "gmmlab/rng.hpp"
#include "gmmlab/schedule.hpp"
#include "gmmlab/types.hpp"

namespace gmmlab {

enum class SamplerKind { ddpm, ddim, ddim_gmm };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::ddim;
  double eta = 0.0;
  /// Number of reverse steps S; DDPM requires S == T.
  int steps = 10;
  /// Required for ddim_gmm, forbidden otherwise.
  std::shared_ptr<const KernelBank> kernel_bank;
  GuidanceConfig guidance;
  bool record_trajectory = false;
};

struct SamplerRun {
  SamplerConfig config;
  std::uint64_t master_seed = 0;
  std::size_t chains = 0;
  /// D x chains.
  Batch finals;
  /// When recorded: entry i is the state after i + 1 reverse steps (D x chains),
  /// so the last entry equals `finals`.
  std::vector<Batch> trajectories;
  long clip_events = 0;
};

/// Ancestral DDPM update between consecutive steps t -> t-1:
///   x_{t-1} = (x_t - beta_t/sqrt(1 - a_t) eps) / sqrt(1 - beta_t) + sqrt(post_var) z,
/// with z = 0 at t = 1.
Vec ddpm_step(const Vec& x_t, int t, const Vec& eps_hat, const Schedule& schedule, RngStream& noise);

/// Generalized DDIM update t -> t_prev (t_prev may be 0):
///   x_prev = sqrt(a_prev) x0_hat + sqrt(1 - a_prev - sigma^2) eps_hat + sigma z.
/// One standard normal vector is drawn from `noise` even when sigma == 0.
Vec ddim_step(const Vec& x_t, int t, int t_prev, const Vec& eps_hat, double sigma, const Schedule& schedule,
              RngStream& noise);

/// Mixture-kernel update: component k ~ pi from `component`, the DDIM mean plus
/// delta^k, then noise with the clipped diagonal variance of component k
/// (standard basis, or the rotated frame for ortho_vub). Noise consumption
/// matches ddim_step exactly. Adds the number of clipped coordinates to
/// `clip_events` when given.
Vec ddim_gmm_step(const Vec& x_t, int t, int t_prev, const Vec& eps_hat, double sigma, const GmmKernelParams& params,
                  const Schedule& schedule, RngStream& component, RngStream& noise, long* clip_events = nullptr);

/// Noise added on top of `mean` for component k: the shared piece of
/// ddim_gmm_step, also used by the inference-direction simulators.
Vec add_kernel_noise(const Vec& mean, double sigma, const GmmKernelParams& params, Eigen::Index k, const Vec& z,
                     long* clip_events = nullptr);

/// Per-chain streams: chain c uses master.split(c); its Gaussian draws come
/// from .split(1) and its component draws from .split(2).
struct ChainStreams {
  RngStream noise;
  RngStream component;
};
ChainStreams chain_streams(std::uint64_t master_seed, std::size_t chain);

/// Runs `chains` independent reverse chains from x_T ~ N(0, I). Guidance other
/// than `none` requires `denoiser` to be an ExactDenoiser. The last reverse
/// step (to alpha = 1) is always the plain Gaussian step. Results do not depend
/// on `threads`.
SamplerRun run_sampler(const SamplerConfig& config, const EpsilonEstimator& denoiser, const Schedule& schedule,
                       std::size_t chains, std::uint64_t master_seed, unsigned threads = 1);

}  // namespace gmmlab
