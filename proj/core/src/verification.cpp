#include "gmmlab/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gmmlab/errors.hpp"
#include "gmmlab/samplers.hpp"

namespace gmmlab {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

struct StepGeometry {
  int t = 0;
  int t_prev = 0;
  double a = 0.0;
  double a_prev = 0.0;
  double sigma = 0.0;
  double coef = 0.0;  // A = sqrt(1 - a_prev - sigma^2) / sqrt(1 - a)
};

StepGeometry geometry(const Schedule& schedule, int j, double eta) {
  StepGeometry g;
  g.t = schedule.step_from(j);
  g.t_prev = schedule.step_to(j);
  g.a = schedule.alpha(g.t);
  g.a_prev = schedule.alpha(g.t_prev);
  g.sigma = sigma_for_step(schedule, j, eta);
  g.coef = std::sqrt(std::max(0.0, 1.0 - g.a_prev - g.sigma * g.sigma)) / std::sqrt(1.0 - g.a);
  return g;
}

/// Symmetric square root factor R (R R^T = S); nullopt if S has an eigenvalue
/// below -tol * max(1, |lambda|_max).
std::optional<Mat> psd_factor(const Mat& s, bool clamp_negative = false) {
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (!clamp_negative && ev.minCoeff() < -1e-10 * scale) return std::nullopt;
  ev = ev.cwiseMax(0.0);
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double gaussian_log_density(const Vec& x, const Vec& mean, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) throw ParameterError("covariance", "not positive definite");
  const Mat l = llt.matrixL();
  if ((l.diagonal().array() <= 0.0).any()) throw ParameterError("covariance", "not positive definite");
  const Vec z = l.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + 2.0 * l.diagonal().array().log().sum() + z.squaredNorm());
}

StepMoments empirical_moments(const Batch& x, int step, const Vec& target_mean, double target_var) {
  const double n = static_cast<double>(x.cols());
  const Eigen::Index d = x.rows();
  StepMoments s;
  s.step = step;
  const Vec m = x.rowwise().mean();
  const Mat y = x.colwise() - m;
  const Mat cov = (y * y.transpose()) / n;
  const Vec err = m - target_mean;
  s.mean_error = err.lpNorm<Eigen::Infinity>();
  s.mean_error_l2 = err.norm();
  s.cov_error = (cov - target_var * Mat::Identity(d, d)).norm();
  s.mean_stderr = std::sqrt(cov.trace() / n);
  // sum_ij Var(y_i y_j) = E||y||^4 - ||cov||_F^2
  const double fourth = y.colwise().squaredNorm().array().square().mean();
  s.cov_stderr = std::sqrt(std::max(0.0, fourth - cov.squaredNorm()) / n);
  return s;
}

StepMoments closed_moments(const ComponentMixture& mix, int step, const Vec& target_mean, double target_var) {
  const auto [m, c] = mixture_moments(mix);
  StepMoments s;
  s.step = step;
  const Vec err = m - target_mean;
  s.mean_error = err.lpNorm<Eigen::Infinity>();
  s.mean_error_l2 = err.norm();
  s.cov_error = (c - target_var * Mat::Identity(c.rows(), c.cols())).norm();
  return s;
}

/// Kernel covariance of component k in the requested form.
Mat kernel_covariance(const GmmKernelParams& params, Eigen::Index k, double sigma, KernelCovariance mode) {
  const Eigen::Index d = params.dim();
  const double s2 = sigma * sigma;
  if (mode == KernelCovariance::full) return s2 * Mat::Identity(d, d) - params.covariance_offset(k);
  const ClippedVariances v = clip_variances(s2, params);
  if (params.scheme == KernelScheme::ortho_vub) {
    const Mat& u = params.frame.value();
    const Eigen::Index kc = u.cols();
    return u * v.variances.col(k).head(kc).asDiagonal() * u.transpose() +
           s2 * (Mat::Identity(d, d) - u * u.transpose());
  }
  return v.variances.col(k).asDiagonal();
}

}  // namespace

std::vector<ComponentMixture> inference_marginals(const Vec& x0, const Schedule& schedule, const KernelBank& bank,
                                                  double eta, std::size_t cap) {
  const int s_count = schedule.num_substeps();
  const Eigen::Index d = x0.size();
  std::size_t count = 1;
  for (int j = s_count; j >= 2; --j) {
    const auto& p = kernel_for_step(bank, j);
    if (p.dim() != d) throw ParameterError("kernel_bank", "dimension mismatch");
    count *= static_cast<std::size_t>(p.components());
    if (count > cap)
      throw CapExceededError("closed-form marginals need more than " + std::to_string(cap) +
                             " components; use the Monte Carlo oracle");
  }

  std::vector<ComponentMixture> out(static_cast<std::size_t>(s_count));
  const double a_top = schedule.alpha(schedule.tau().back());
  out.back().push_back({1.0, std::sqrt(a_top) * x0, (1.0 - a_top) * Mat::Identity(d, d)});

  for (int j = s_count; j >= 2; --j) {
    const StepGeometry g = geometry(schedule, j, eta);
    const auto& params = kernel_for_step(bank, j);
    const Eigen::Index kc = params.components();
    std::vector<Mat> kernel_cov;
    for (Eigen::Index k = 0; k < kc; ++k)
      kernel_cov.push_back(g.sigma * g.sigma * Mat::Identity(d, d) - params.covariance_offset(k));
    const Vec anchor_prev = std::sqrt(g.a_prev) * x0;
    const Vec anchor = std::sqrt(g.a) * x0;
    const auto& from = out[static_cast<std::size_t>(j - 1)];
    auto& to = out[static_cast<std::size_t>(j - 2)];
    to.reserve(from.size() * static_cast<std::size_t>(kc));
    for (const auto& c : from) {
      const Vec base = anchor_prev + g.coef * (c.mean - anchor);
      const Mat base_cov = g.coef * g.coef * c.cov;
      for (Eigen::Index k = 0; k < kc; ++k)
        to.push_back({c.weight * params.priors[k], base + params.deltas.col(k),
                      base_cov + kernel_cov[static_cast<std::size_t>(k)]});
    }
  }
  return out;
}

std::pair<Vec, Mat> mixture_moments(const ComponentMixture& mixture) {
  const Eigen::Index d = mixture.front().mean.size();
  Vec m = Vec::Zero(d);
  for (const auto& c : mixture) m += c.weight * c.mean;
  Mat cov = Mat::Zero(d, d);
  for (const auto& c : mixture) {
    const Vec dm = c.mean - m;
    cov += c.weight * (c.cov + dm * dm.transpose());
  }
  return {m, cov};
}

double mixture_log_density(const ComponentMixture& mixture, const Vec& x) {
  std::vector<double> terms;
  terms.reserve(mixture.size());
  for (const auto& c : mixture) terms.push_back(std::log(c.weight) + gaussian_log_density(x, c.mean, c.cov));
  return log_sum_exp(terms);
}

MixtureDistribution to_distribution(const ComponentMixture& mixture) {
  std::vector<double> w;
  std::vector<Vec> m;
  std::vector<Mat> c;
  for (const auto& comp : mixture) {
    w.push_back(comp.weight);
    m.push_back(comp.mean);
    c.push_back(0.5 * (comp.cov + comp.cov.transpose()));
  }
  return MixtureDistribution(std::move(w), std::move(m), std::move(c));
}

bool MomentReport::within(double k_sigma) const {
  if (!simulable) return false;
  return std::all_of(steps.begin(), steps.end(), [k_sigma](const StepMoments& s) {
    return s.mean_error_l2 <= k_sigma * s.mean_stderr && s.cov_error <= k_sigma * s.cov_stderr;
  });
}

double MomentReport::max_mean_error() const {
  double m = 0.0;
  for (const auto& s : steps) m = std::max(m, s.mean_error);
  return m;
}

double MomentReport::max_cov_error() const {
  double m = 0.0;
  for (const auto& s : steps) m = std::max(m, s.cov_error);
  return m;
}

MomentReport closed_form_marginals(const Vec& x0, const Schedule& schedule, const KernelBank& bank, double eta,
                                   std::size_t cap) {
  const auto marginals = inference_marginals(x0, schedule, bank, eta, cap);
  MomentReport r;
  r.method = MomentMethod::closed_form;
  r.components = marginals.front().size();
  for (int i = schedule.num_substeps() - 1; i >= 0; --i) {
    const int t = schedule.tau()[static_cast<std::size_t>(i)];
    const double a = schedule.alpha(t);
    r.steps.push_back(closed_moments(marginals[static_cast<std::size_t>(i)], t, std::sqrt(a) * x0, 1.0 - a));
  }
  return r;
}

std::string to_string(KernelVariant v) {
  switch (v) {
    case KernelVariant::full_cov: return "full_cov";
    case KernelVariant::diag_approx: return "diag_approx";
    case KernelVariant::vub_clipped: return "vub_clipped";
  }
  return "full_cov";
}

GmmKernelParams vub_view(const GmmKernelParams& params) {
  if (!params.frame) throw ParameterError("kernel_bank", "vub_clipped needs an orthonormal frame (ortho schemes)");
  GmmKernelParams p = params;
  p.scheme = KernelScheme::ortho_vub;
  const Eigen::Index kc = p.components();
  p.cov_diag_offsets = Mat::Zero(p.dim(), kc);
  if (kc > 1)
    for (Eigen::Index k = 0; k < kc; ++k)
      p.cov_diag_offsets.col(k).head(kc) = p.scale * p.scale / static_cast<double>(kc) * (p.priors / p.priors[k]);
  return p;
}

GmmKernelParams diagonal_view(const GmmKernelParams& params) {
  GmmKernelParams p = params;
  if (p.scheme == KernelScheme::ortho_vub) p.scheme = KernelScheme::ortho;
  for (Eigen::Index k = 0; k < p.components(); ++k) p.cov_diag_offsets.col(k) = p.covariance_offset(k).diagonal();
  return p;
}

MomentReport monte_carlo_marginals(const Vec& x0, const Schedule& schedule, const KernelBank& bank, double eta,
                                   KernelVariant variant, std::size_t chains, RngStream& rng) {
  MomentReport r;
  r.method = MomentMethod::monte_carlo;
  r.chains = chains;
  const int s_count = schedule.num_substeps();
  const Eigen::Index d = x0.size();
  const auto n = static_cast<Eigen::Index>(chains);
  if (chains < 2) throw ParameterError("chains", "need at least two chains");

  // Per-step kernel views prepared up front so an indefinite kernel is
  // reported before any sampling.
  struct StepKernel {
    StepGeometry g;
    GmmKernelParams params;
    std::vector<Mat> factors;  // full_cov only
  };
  std::vector<StepKernel> kernels;
  for (int j = s_count; j >= 2; --j) {
    StepKernel sk{geometry(schedule, j, eta), kernel_for_step(bank, j), {}};
    if (sk.params.dim() != d) throw ParameterError("kernel_bank", "dimension mismatch");
    switch (variant) {
      case KernelVariant::full_cov:
        for (Eigen::Index k = 0; k < sk.params.components(); ++k) {
          auto f = psd_factor(sk.g.sigma * sk.g.sigma * Mat::Identity(d, d) - sk.params.covariance_offset(k));
          if (!f) {
            r.simulable = false;
            r.note = "kernel covariance sigma^2 I - Delta^k is indefinite at step " + std::to_string(sk.g.t);
            return r;
          }
          sk.factors.push_back(std::move(*f));
        }
        break;
      case KernelVariant::diag_approx:
        sk.params = diagonal_view(sk.params);
        break;
      case KernelVariant::vub_clipped:
        sk.params = vub_view(sk.params);
        break;
    }
    kernels.push_back(std::move(sk));
  }

  const double a_top = schedule.alpha(schedule.tau().back());
  Batch x(d, n);
  for (Eigen::Index c = 0; c < n; ++c) x.col(c) = std::sqrt(a_top) * x0 + std::sqrt(1.0 - a_top) * rng.normal_vector(d);
  r.steps.push_back(empirical_moments(x, schedule.tau().back(), std::sqrt(a_top) * x0, 1.0 - a_top));

  long clips = 0;
  for (const auto& sk : kernels) {
    const StepGeometry& g = sk.g;
    const Vec anchor_prev = std::sqrt(g.a_prev) * x0;
    const Vec anchor = std::sqrt(g.a) * x0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const Eigen::Index k = rng.categorical(sk.params.priors);
      const Vec mean = anchor_prev + g.coef * (x.col(c) - anchor);
      const Vec z = rng.normal_vector(d);
      if (variant == KernelVariant::full_cov)
        x.col(c) = mean + sk.params.deltas.col(k) + sk.factors[static_cast<std::size_t>(k)] * z;
      else
        x.col(c) = add_kernel_noise(mean, g.sigma, sk.params, k, z, &clips);
    }
    r.steps.push_back(empirical_moments(x, g.t_prev, anchor_prev, 1.0 - g.a_prev));
  }
  return r;
}

ElboReport elbo_weights(const Schedule& schedule, const KernelBank& bank, double eta, double sigma_1) {
  if (!(sigma_1 > 0.0)) throw ParameterError("sigma_1", "must be > 0");
  ElboReport r;
  for (int j = schedule.num_substeps(); j >= 2; --j) {
    const int t = schedule.step_from(j);
    const double a = schedule.alpha(t);
    const double sigma = sigma_for_step(schedule, j, eta);
    const auto& params = kernel_for_step(bank, j);
    const ClippedVariances v = clip_variances(sigma * sigma, params);
    ElboStep s;
    s.step = t;
    s.nu.resize(params.components());
    double inv_sum = 0.0;
    for (Eigen::Index k = 0; k < params.components(); ++k) {
      double nu = v.variances.col(k).minCoeff();
      if (nu < kNuFloor) {
        nu = kNuFloor;
        s.degenerate = true;
      }
      s.nu[k] = nu;
      inv_sum += params.priors[k] / nu;
    }
    s.weight = inv_sum * (1.0 - a) / (2.0 * a);
    r.degenerate = r.degenerate || s.degenerate;
    r.steps.push_back(std::move(s));
  }
  const double a1 = schedule.alpha(schedule.tau().front());
  r.k2_coefficient = (1.0 - a1) / (2.0 * sigma_1 * sigma_1 * a1);
  return r;
}

double evaluate_elbo_bound(ElboReport& report, const Schedule& schedule, const KernelBank& bank, double eta,
                           const Batch& x0_samples, const EpsilonEstimator& estimator, RngStream& rng,
                           std::size_t cap) {
  const Eigen::Index d = x0_samples.rows();
  if (x0_samples.cols() < 1) throw ParameterError("x0_samples", "need at least one sample");
  if (report.steps.size() + 1 != static_cast<std::size_t>(schedule.num_substeps()))
    throw ParameterError("report", "does not match the schedule");
  // Component shifts do not depend on x0, so build them once around the origin.
  const auto marginals = inference_marginals(Vec::Zero(d), schedule, bank, eta, cap);

  auto expected_loss = [&](std::size_t tau_index) {
    const int t = schedule.tau()[tau_index];
    const double a = schedule.alpha(t);
    const auto& comps = marginals[tau_index];
    Vec xi(static_cast<Eigen::Index>(comps.size()));
    std::vector<Mat> factors;
    for (std::size_t l = 0; l < comps.size(); ++l) {
      xi[static_cast<Eigen::Index>(l)] = comps[l].weight;
      factors.push_back(*psd_factor(comps[l].cov, /*clamp_negative=*/true));
    }
    double total = 0.0;
    for (Eigen::Index n = 0; n < x0_samples.cols(); ++n) {
      const auto l = static_cast<std::size_t>(rng.categorical(xi));
      const Vec x0 = x0_samples.col(n);
      const Vec x_t = std::sqrt(a) * x0 + comps[l].mean + factors[l] * rng.normal_vector(d);
      const Vec target = (x_t - std::sqrt(a) * x0) / std::sqrt(1.0 - a);
      total += (target - estimator.epsilon(x_t, t)).squaredNorm();
    }
    return total / static_cast<double>(x0_samples.cols());
  };

  double bound = 0.0;
  for (std::size_t i = 0; i < report.steps.size(); ++i) {
    const auto tau_index = static_cast<std::size_t>(schedule.num_substeps() - 1) - i;
    bound += report.steps[i].weight * expected_loss(tau_index);
  }
  bound += report.k2_coefficient * expected_loss(0);
  report.total_bound = bound;
  return bound;
}

MixtureDistribution exact_denoising_posterior(const DataDistribution& data, const Schedule& schedule,
                                              const GmmKernelParams& params, int j, double eta, const Vec& x_t,
                                              KernelCovariance covariance) {
  const Eigen::Index d = dim_of(data);
  if (x_t.size() != d || params.dim() != d) throw ParameterError("x_t", "dimension mismatch");
  const StepGeometry g = geometry(schedule, j, eta);
  const double sa = std::sqrt(g.a);
  const double c0 = std::sqrt(g.a_prev) - g.coef * sa;
  const Mat eye = Mat::Identity(d, d);

  // Posterior of x0 given x_t, one Gaussian per data component.
  std::vector<double> log_w;
  std::vector<Vec> post_mean;
  std::vector<Mat> post_cov;
  if (const auto* mix = std::get_if<MixtureDistribution>(&data)) {
    for (std::size_t i = 0; i < mix->size(); ++i) {
      const Mat& s = mix->covariance(i);
      const Mat c = g.a * s + (1.0 - g.a) * eye;
      Eigen::LLT<Mat> llt(c);
      const Vec resid = x_t - sa * mix->mean(i);
      log_w.push_back(std::log(mix->weight(i)) + gaussian_log_density(x_t, sa * mix->mean(i), c));
      const Mat gain = sa * llt.solve(s).transpose();  // sqrt(a) S C^{-1}
      post_mean.push_back(mix->mean(i) + gain * resid);
      Mat p = s - sa * gain * s;
      post_cov.push_back(0.5 * (p + p.transpose()));
    }
  } else {
    const auto& cloud = std::get<PointCloud>(data);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Vec xi = cloud.points().col(static_cast<Eigen::Index>(i));
      const Vec resid = x_t - sa * xi;
      const double v = 1.0 - g.a;
      log_w.push_back(std::log(cloud.weights()[i]) -
                      0.5 * (static_cast<double>(d) * (kLog2Pi + std::log(v)) + resid.squaredNorm() / v));
      post_mean.push_back(xi);
      post_cov.push_back(Mat::Zero(d, d));
    }
  }
  const double norm = log_sum_exp(log_w);

  std::vector<Mat> kcov;
  for (Eigen::Index k = 0; k < params.components(); ++k) kcov.push_back(kernel_covariance(params, k, g.sigma, covariance));

  std::vector<double> w;
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    const double wi = std::exp(log_w[i] - norm);
    for (Eigen::Index k = 0; k < params.components(); ++k) {
      const double wk = wi * params.priors[k];
      if (wk <= 0.0) continue;  // underflowed component
      w.push_back(wk);
      means.push_back(c0 * post_mean[i] + g.coef * x_t + params.deltas.col(k));
      covs.push_back(c0 * c0 * post_cov[i] + kcov[static_cast<std::size_t>(k)]);
    }
  }
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return MixtureDistribution(std::move(w), std::move(means), std::move(covs));
}

double forward_conditional_logdensity(const Vec& x0, const Schedule& schedule, const KernelBank& bank, double eta,
                                      int j, const Vec& x_t, const Vec& x_prev, std::size_t cap) {
  if (j < 2) throw ParameterError("step_index", "forward density needs a mixture transition (j >= 2)");
  const auto marginals = inference_marginals(x0, schedule, bank, eta, cap);
  const StepGeometry g = geometry(schedule, j, eta);
  const auto& params = kernel_for_step(bank, j);
  const Eigen::Index d = x0.size();
  const Vec base = std::sqrt(g.a_prev) * x0 + g.coef * (x_t - std::sqrt(g.a) * x0);
  std::vector<double> terms;
  for (Eigen::Index k = 0; k < params.components(); ++k)
    terms.push_back(std::log(params.priors[k]) +
                    gaussian_log_density(x_prev, base + params.deltas.col(k),
                                         g.sigma * g.sigma * Mat::Identity(d, d) - params.covariance_offset(k)));
  return log_sum_exp(terms) + mixture_log_density(marginals[static_cast<std::size_t>(j - 1)], x_t) -
         mixture_log_density(marginals[static_cast<std::size_t>(j - 2)], x_prev);
}

}  // namespace gmmlab
