#include "gmmlab/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "gmmlab/errors.hpp"

namespace gmmlab {

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::ddpm: return "ddpm";
    case SamplerKind::ddim: return "ddim";
    case SamplerKind::ddim_gmm: return "ddim_gmm";
  }
  return "ddim";
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "ddpm") return SamplerKind::ddpm;
  if (name == "ddim") return SamplerKind::ddim;
  if (name == "ddim_gmm") return SamplerKind::ddim_gmm;
  throw ParameterError("sampler.kind", "unknown sampler '" + name + "'");
}

Vec ddpm_step(const Vec& x_t, int t, const Vec& eps_hat, const Schedule& schedule, RngStream& noise) {
  const double beta = schedule.beta(t);
  const double a = schedule.alpha(t);
  const double a_prev = schedule.alpha(t - 1);
  Vec mean = (x_t - (beta / std::sqrt(1.0 - a)) * eps_hat) / std::sqrt(1.0 - beta);
  if (t == 1) return mean;
  const double post_var = (1.0 - a_prev) / (1.0 - a) * beta;
  return mean + std::sqrt(post_var) * noise.normal_vector(x_t.size());
}

namespace {

/// sqrt(a_prev) x0_hat + sqrt(1 - a_prev - sigma^2) eps_hat.
Vec ddim_mean(const Vec& x_t, int t, int t_prev, const Vec& eps_hat, double sigma, const Schedule& schedule) {
  const double a = schedule.alpha(t);
  const double a_prev = schedule.alpha(t_prev);
  if (!(a_prev > a)) throw ScheduleOrderError("ddim step requires alpha(t_prev) > alpha(t)");
  const double rem = 1.0 - a_prev - sigma * sigma;
  if (rem < -1e-12) throw VarianceOverflowError("sigma^2 exceeds 1 - alpha(t_prev)");
  const Vec x0_hat = predicted_x0(x_t, eps_hat, a);
  return std::sqrt(a_prev) * x0_hat + std::sqrt(std::max(0.0, rem)) * eps_hat;
}

}  // namespace

Vec ddim_step(const Vec& x_t, int t, int t_prev, const Vec& eps_hat, double sigma, const Schedule& schedule,
              RngStream& noise) {
  const Vec mean = ddim_mean(x_t, t, t_prev, eps_hat, sigma, schedule);
  const Vec z = noise.normal_vector(x_t.size());
  return mean + sigma * z;
}

Vec add_kernel_noise(const Vec& mean, double sigma, const GmmKernelParams& params, Eigen::Index k, const Vec& z,
                     long* clip_events) {
  int clipped = 0;
  Vec x;
  if (params.scheme == KernelScheme::ortho_vub) {
    const Mat& u = params.frame.value();
    const auto b = params.cov_diag_offsets.col(k);
    const double sigma_sq = sigma * sigma;
    x = mean + params.deltas.col(k) + sigma * z;
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      if (b[j] == 0.0) continue;
      if (b[j] > sigma_sq) ++clipped;
      const double reduced = std::sqrt(std::max(0.0, sigma_sq - b[j]));
      x -= ((sigma - reduced) * u.col(j).dot(z)) * u.col(j);
    }
  } else {
    const Vec sd = component_stddev(sigma, params, k, &clipped);
    x = mean + params.deltas.col(k) + sd.cwiseProduct(z);
  }
  if (clip_events) *clip_events += clipped;
  return x;
}

Vec ddim_gmm_step(const Vec& x_t, int t, int t_prev, const Vec& eps_hat, double sigma, const GmmKernelParams& params,
                  const Schedule& schedule, RngStream& component, RngStream& noise, long* clip_events) {
  if (params.dim() != x_t.size()) throw ParameterError("kernel_bank", "dimension mismatch");
  const Eigen::Index k = component.categorical(params.priors);
  const Vec mean = ddim_mean(x_t, t, t_prev, eps_hat, sigma, schedule);
  const Vec z = noise.normal_vector(x_t.size());
  return add_kernel_noise(mean, sigma, params, k, z, clip_events);
}

ChainStreams chain_streams(std::uint64_t master_seed, std::size_t chain) {
  const RngStream c = RngStream(master_seed).split(static_cast<std::uint64_t>(chain));
  return {c.split(1), c.split(2)};
}

SamplerRun run_sampler(const SamplerConfig& config, const EpsilonEstimator& denoiser, const Schedule& schedule,
                       std::size_t chains, std::uint64_t master_seed, unsigned threads) {
  if (!(config.eta >= 0.0 && config.eta <= 1.0)) throw ParameterError("sampler.eta", "must lie in [0, 1]");
  const bool gmm = config.kind == SamplerKind::ddim_gmm;
  if (gmm && (!config.kernel_bank || config.kernel_bank->empty()))
    throw ParameterError("kernel_bank", "ddim_gmm needs a kernel bank");
  if (!gmm && config.kernel_bank) throw ParameterError("kernel_bank", "only ddim_gmm takes a kernel bank");

  Schedule sched = schedule;
  if (config.kind == SamplerKind::ddpm) {
    if (config.steps != schedule.total_steps())
      throw ParameterError("sampler.steps", "ddpm runs the full schedule (steps must equal total_steps)");
    sched = select_substeps(schedule, schedule.total_steps());
  } else {
    sched = select_substeps(schedule, config.steps);
  }
  const int s_count = sched.num_substeps();
  const Eigen::Index dim = denoiser.dim();

  if (gmm) {
    const auto& bank = *config.kernel_bank;
    if (bank.size() != 1 && bank.size() < static_cast<std::size_t>(s_count))
      throw ParameterError("kernel_bank", "bank shorter than the step count");
    for (const auto& p : bank)
      if (p.dim() != dim) throw ParameterError("kernel_bank", "dimension mismatch");
  }

  std::unique_ptr<GuidedEstimator> guided;
  const EpsilonEstimator* est = &denoiser;
  if (config.guidance.mode != GuidanceConfig::Mode::none) {
    const auto* exact = dynamic_cast<const ExactDenoiser*>(&denoiser);
    if (!exact) throw ParameterError("guidance.mode", "guidance needs an analytic denoiser");
    guided = std::make_unique<GuidedEstimator>(denoiser, *exact, config.guidance);
    est = guided.get();
  }

  std::vector<double> sigmas(static_cast<std::size_t>(s_count) + 1, 0.0);
  if (config.kind != SamplerKind::ddpm)
    for (int j = 1; j <= s_count; ++j) sigmas[static_cast<std::size_t>(j)] = sigma_for_step(sched, j, config.eta);

  SamplerRun run;
  run.config = config;
  run.master_seed = master_seed;
  run.chains = chains;
  run.finals.resize(dim, static_cast<Eigen::Index>(chains));
  if (config.record_trajectory) run.trajectories.assign(static_cast<std::size_t>(s_count), Batch(dim, static_cast<Eigen::Index>(chains)));

  auto run_range = [&](std::size_t begin, std::size_t end, long* clips) {
    for (std::size_t c = begin; c < end; ++c) {
      ChainStreams streams = chain_streams(master_seed, c);
      Vec x = streams.noise.normal_vector(dim);
      for (int j = s_count; j >= 1; --j) {
        const int t = sched.step_from(j);
        const int t_prev = sched.step_to(j);
        const Vec eps = est->epsilon(x, t);
        const double sigma = sigmas[static_cast<std::size_t>(j)];
        switch (config.kind) {
          case SamplerKind::ddpm:
            x = ddpm_step(x, t, eps, sched, streams.noise);
            break;
          case SamplerKind::ddim:
            x = ddim_step(x, t, t_prev, eps, sigma, sched, streams.noise);
            break;
          case SamplerKind::ddim_gmm:
            if (j >= 2)
              x = ddim_gmm_step(x, t, t_prev, eps, sigma, kernel_for_step(*config.kernel_bank, j), sched,
                                streams.component, streams.noise, clips);
            else
              x = ddim_step(x, t, t_prev, eps, sigma, sched, streams.noise);
            break;
        }
        if (config.record_trajectory)
          run.trajectories[static_cast<std::size_t>(s_count - j)].col(static_cast<Eigen::Index>(c)) = x;
      }
      run.finals.col(static_cast<Eigen::Index>(c)) = x;
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(chains, 1))));
  if (workers == 1) {
    run_range(0, chains, &run.clip_events);
  } else {
    std::vector<long> clips(workers, 0);
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      const std::size_t block = (chains + workers - 1) / workers;
      for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(chains, w * block);
        const std::size_t end = std::min(chains, begin + block);
        pool.emplace_back([&, w, begin, end] {
          try {
            run_range(begin, end, &clips[w]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (long c : clips) run.clip_events += c;
  }
  return run;
}

}  // namespace gmmlab
