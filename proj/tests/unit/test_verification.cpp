#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gmmlab/denoiser.hpp"
#include "gmmlab/errors.hpp"
#include "gmmlab/gmm_kernel.hpp"
#include "gmmlab/schedule.hpp"
#include "gmmlab/synthetic_data.hpp"
#include "gmmlab/verification.hpp"

using namespace gmmlab;

namespace {

Schedule base() { return Schedule::linear(1000, 0.0015, 0.0195); }

KernelBank random_bank(KernelScheme scheme, Eigen::Index d, Eigen::Index k, double s, int steps, std::uint64_t seed) {
  KernelBankSpec spec;
  spec.scheme = scheme;
  spec.dimension = d;
  spec.components = k;
  spec.scale = s;
  RngStream rng(seed);
  return build_kernel_bank(spec, steps, rng);
}

double normal_pdf(double x, double m, double var) {
  return std::exp(-0.5 * (x - m) * (x - m) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

// Two-component 1-D kernel with offsets +-s: Delta = s^2 for both components.
GmmKernelParams two_point_kernel(double s) {
  return GmmKernelParams::from_offsets(uniform_priors(2), (Mat(1, 2) << s, -s).finished());
}

}  // namespace

TEST(ClosedForm, SingleComponentIsExact) {
  const Schedule sched = select_substeps(base(), 5);
  const KernelBank bank = random_bank(KernelScheme::ortho, 3, 1, 1.0, 5, 1);
  const Vec x0 = (Vec(3) << 0.5, -1.0, 2.0).finished();
  const MomentReport r = closed_form_marginals(x0, sched, bank, 0.5);
  ASSERT_EQ(r.steps.size(), 5u);
  EXPECT_LT(r.max_mean_error(), 1e-14);
  EXPECT_LT(r.max_cov_error(), 1e-14);
}

TEST(ClosedForm, OrthoKTwoMatchesTargets) {
  const Schedule sched = select_substeps(base(), 3);
  const KernelBank bank = random_bank(KernelScheme::ortho, 3, 2, 1.0, 3, 7);
  const Vec x0 = (Vec(3) << 1.0, 0.0, -0.5).finished();
  const MomentReport r = closed_form_marginals(x0, sched, bank, 1.0);
  EXPECT_EQ(r.components, 4u);
  EXPECT_LT(r.max_mean_error(), 1e-10);
  EXPECT_LT(r.max_cov_error(), 1e-9);
}

TEST(ClosedForm, FirstTransitionKeepsMean) {
  const Schedule sched = select_substeps(base(), 4);
  const KernelBank bank = random_bank(KernelScheme::rand, 4, 3, 2.0, 4, 3);
  const Vec x0 = Vec::LinSpaced(4, -1.0, 1.0);
  const auto m = inference_marginals(x0, sched, bank, 0.3);
  const std::size_t top_minus_one = m.size() - 2;
  ASSERT_EQ(m[top_minus_one].size(), 3u);
  const auto [mean, cov] = mixture_moments(m[top_minus_one]);
  const double a = sched.alpha(sched.tau()[top_minus_one]);
  EXPECT_LT((mean - std::sqrt(a) * x0).norm(), 1e-12);
  EXPECT_LT((cov - (1.0 - a) * Mat::Identity(4, 4)).norm(), 1e-12);
}

TEST(ClosedForm, RefusesAboveCap) {
  const Schedule sched = select_substeps(base(), 6);
  const KernelBank bank = random_bank(KernelScheme::ortho, 9, 8, 1.0, 6, 3);
  EXPECT_THROW(closed_form_marginals(Vec::Zero(9), sched, bank, 1.0), CapExceededError);
  EXPECT_NO_THROW(closed_form_marginals(Vec::Zero(9), sched, bank, 1.0, 1u << 15));
  EXPECT_THROW(forward_conditional_logdensity(Vec::Zero(9), sched, bank, 1.0, 3, Vec::Zero(9), Vec::Zero(9), 64),
               CapExceededError);
}

TEST(MonteCarlo, AgreesWithClosedForm) {
  const Schedule sched = select_substeps(base(), 3);
  const KernelBank bank = random_bank(KernelScheme::ortho, 3, 2, 0.01, 3, 11);
  const Vec x0 = (Vec(3) << 1.0, 0.0, -0.5).finished();
  const MomentReport closed = closed_form_marginals(x0, sched, bank, 1.0);
  RngStream rng(5);
  const MomentReport mc = monte_carlo_marginals(x0, sched, bank, 1.0, KernelVariant::full_cov, 1000000, rng);
  ASSERT_TRUE(mc.simulable) << mc.note;
  ASSERT_EQ(mc.steps.size(), closed.steps.size());
  EXPECT_TRUE(mc.within(3.0));
  for (std::size_t i = 0; i < mc.steps.size(); ++i) {
    EXPECT_EQ(mc.steps[i].step, closed.steps[i].step);
    EXPECT_LE(mc.steps[i].mean_error_l2, 3.0 * mc.steps[i].mean_stderr) << "step " << mc.steps[i].step;
    EXPECT_LE(mc.steps[i].cov_error, 3.0 * mc.steps[i].cov_stderr) << "step " << mc.steps[i].step;
  }
}

TEST(MonteCarlo, ZeroScaleVariantsAllMatch) {
  const Schedule sched = select_substeps(base(), 5);
  const KernelBank bank = random_bank(KernelScheme::ortho_vub, 4, 3, 0.0, 5, 2);
  const Vec x0 = Vec::Constant(4, 0.7);
  for (KernelVariant v : {KernelVariant::full_cov, KernelVariant::diag_approx, KernelVariant::vub_clipped}) {
    RngStream rng(8);
    const MomentReport r = monte_carlo_marginals(x0, sched, bank, 1.0, v, 100000, rng);
    ASSERT_TRUE(r.simulable) << to_string(v);
    EXPECT_TRUE(r.within(3.0)) << to_string(v);
  }
}

TEST(MonteCarlo, ClippedVubShowsGap) {
  const Schedule sched = select_substeps(base(), 5);
  const KernelBank bank = random_bank(KernelScheme::ortho_vub, 6, 4, 10.0, 5, 2);
  RngStream rng(8);
  const MomentReport r = monte_carlo_marginals(Vec::Zero(6), sched, bank, 1.0, KernelVariant::vub_clipped, 20000, rng);
  ASSERT_TRUE(r.simulable);
  EXPECT_FALSE(r.within(3.0));
  EXPECT_GT(r.max_cov_error(), 1.0);
}

TEST(MonteCarlo, IndefiniteKernelIsNotSimulated) {
  const Schedule sched = select_substeps(base(), 3);
  const KernelBank bank = random_bank(KernelScheme::ortho, 3, 2, 1.0, 3, 7);
  RngStream rng(1);
  const MomentReport r = monte_carlo_marginals(Vec::Zero(3), sched, bank, 1.0, KernelVariant::full_cov, 1000, rng);
  EXPECT_FALSE(r.simulable);
  EXPECT_FALSE(r.note.empty());
}

TEST(Elbo, UniformEqualNuCollapses) {
  const Schedule sched = select_substeps(base(), 6);
  const KernelBank bank = random_bank(KernelScheme::ortho_vub, 10, 8, 0.1, 6, 4);
  const ElboReport r = elbo_weights(sched, bank, 1.0, 0.05);
  ASSERT_EQ(r.steps.size(), 5u);
  for (const ElboStep& s : r.steps) {
    const double a = sched.alpha(s.step);
    const double nu = s.nu[0];
    for (Eigen::Index k = 1; k < s.nu.size(); ++k) EXPECT_EQ(s.nu[k], nu);
    EXPECT_NEAR(s.weight, (1.0 / nu) * (1.0 - a) / (2.0 * a), 1e-12 * s.weight);
  }
}

TEST(Elbo, SingleComponentIsStandardWeight) {
  const Schedule sched = select_substeps(base(), 8);
  const KernelBank bank = random_bank(KernelScheme::rand, 2, 1, 0.0, 8, 1);
  const ElboReport r = elbo_weights(sched, bank, 0.6, 0.1);
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const int j = 8 - static_cast<int>(i);
    const double sigma = sigma_for_step(sched, j, 0.6);
    const double a = sched.alpha(sched.step_from(j));
    EXPECT_NEAR(r.steps[i].weight, (1.0 - a) / (2.0 * sigma * sigma * a), 1e-12 * r.steps[i].weight);
  }
  const double a1 = sched.alpha(sched.tau().front());
  EXPECT_NEAR(r.k2_coefficient, (1.0 - a1) / (2.0 * 0.01 * a1), 1e-12 * r.k2_coefficient);
  EXPECT_FALSE(r.degenerate);
}

TEST(Elbo, RandomBankMatchesDirectSum) {
  const Schedule sched = select_substeps(base(), 6);
  RngStream rng(3);
  for (KernelScheme scheme : {KernelScheme::rand, KernelScheme::ortho, KernelScheme::ortho_vub}) {
    KernelBank bank;
    for (int j = 0; j < 6; ++j) {
      Vec pi(3);
      for (int i = 0; i < 3; ++i) pi[i] = 1.0 + rng.uniform();
      pi /= pi.sum();
      bank.push_back(make_kernel(scheme, 5, 3, pi, 0.05, rng));
    }
    const ElboReport r = elbo_weights(sched, bank, 1.0, 0.1);
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
      const int j = 6 - static_cast<int>(i);
      const GmmKernelParams& p = bank[static_cast<std::size_t>(j - 1)];
      const double s2 = std::pow(sigma_for_step(sched, j, 1.0), 2);
      double sum = 0.0;
      for (Eigen::Index k = 0; k < 3; ++k) {
        double nu = INFINITY;
        for (Eigen::Index c = 0; c < 5; ++c) nu = std::min(nu, std::max(0.0, s2 - p.cov_diag_offsets(c, k)));
        nu = std::max(nu, kNuFloor);
        EXPECT_EQ(r.steps[i].nu[k], nu);
        sum += p.priors[k] / nu;
      }
      const double a = sched.alpha(sched.step_from(j));
      const double expected = sum * (1.0 - a) / (2.0 * a);
      EXPECT_LE(std::abs(r.steps[i].weight - expected), 1e-12 * expected) << to_string(scheme);
    }
  }
}

TEST(Elbo, WeightIncreasesAsNuShrinks) {
  const Schedule sched = select_substeps(base(), 4);
  KernelBank bank = random_bank(KernelScheme::ortho_vub, 5, 3, 0.05, 4, 6);
  const double before = elbo_weights(sched, bank, 1.0, 0.1).steps.front().weight;
  bank[3].cov_diag_offsets(0, 1) *= 1.5;
  const double after = elbo_weights(sched, bank, 1.0, 0.1).steps.front().weight;
  EXPECT_GT(after, before);
}

TEST(Elbo, DegenerateIsFlagged) {
  const Schedule sched = select_substeps(base(), 4);
  const KernelBank bank = random_bank(KernelScheme::ortho_vub, 5, 3, 10.0, 4, 6);
  const ElboReport r = elbo_weights(sched, bank, 1.0, 0.1);
  EXPECT_TRUE(r.degenerate);
  for (const auto& s : r.steps) EXPECT_TRUE(std::isfinite(s.weight));
  EXPECT_THROW(elbo_weights(sched, bank, 1.0, 0.0), ParameterError);
}

TEST(Elbo, ExactEstimatorBoundIsFinite) {
  const Schedule sched = select_substeps(base(), 3);
  const KernelBank bank = random_bank(KernelScheme::ortho, 3, 2, 0.01, 3, 2);
  const MixtureDistribution data = ring8(3);
  const ExactDenoiser den(data, sched);
  RngStream rng(4);
  const Batch x0 = data.sample(500, rng);
  ElboReport r = elbo_weights(sched, bank, 1.0, std::sqrt(1.0 - sched.alpha(sched.tau().front())));
  const double v = evaluate_elbo_bound(r, sched, bank, 1.0, x0, den, rng);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
  EXPECT_EQ(v, r.total_bound);
}

TEST(Posterior, SymmetricTwoPoints) {
  const Schedule sched = select_substeps(base(), 10);
  const PointCloud cloud((Batch(1, 2) << -1.5, 1.5).finished());
  const GmmKernelParams p = GmmKernelParams::from_offsets(uniform_priors(1), Mat::Zero(1, 1));
  const MixtureDistribution post = exact_denoising_posterior(cloud, sched, p, 6, 0.5, Vec::Zero(1));
  ASSERT_EQ(post.size(), 2u);
  EXPECT_NEAR(post.weight(0), 0.5, 1e-15);
  EXPECT_NEAR(post.mean(0)[0], -post.mean(1)[0], 1e-15);
  EXPECT_NEAR(post.covariance(0)(0, 0), post.covariance(1)(0, 0), 1e-15);
  EXPECT_NEAR(post.log_density(Vec::Constant(1, 0.3)), post.log_density(Vec::Constant(1, -0.3)), 1e-12);
}

TEST(Posterior, SinglePointIsDdimMean) {
  const Schedule sched = select_substeps(base(), 10);
  const Vec x0 = (Vec(2) << 0.4, -0.9).finished();
  const GmmKernelParams p = GmmKernelParams::from_offsets(uniform_priors(1), Mat::Zero(2, 1));
  const Vec x_t = (Vec(2) << 1.0, 0.2).finished();
  const int j = 4;
  const MixtureDistribution post = exact_denoising_posterior(PointCloud(Batch(x0)), sched, p, j, 0.5, x_t);
  ASSERT_EQ(post.size(), 1u);
  const double a = sched.alpha(sched.step_from(j)), a_prev = sched.alpha(sched.step_to(j));
  const double sigma = sigma_for_step(sched, j, 0.5);
  const Vec eps = (x_t - std::sqrt(a) * x0) / std::sqrt(1.0 - a);
  const Vec expected = std::sqrt(a_prev) * x0 + std::sqrt(1.0 - a_prev - sigma * sigma) * eps;
  EXPECT_LT((post.mean(0) - expected).norm(), 1e-12);
  EXPECT_LT((post.covariance(0) - sigma * sigma * Mat::Identity(2, 2)).norm(), 1e-14);
}

TEST(Posterior, OneDimensionalQuadrature) {
  const Schedule sched = select_substeps(base(), 10);
  const Batch pts = (Batch(1, 2) << -1.0, 2.0).finished();
  const std::vector<double> w{0.3, 0.7};
  const PointCloud cloud(pts, w);
  const double s = 0.2;
  const GmmKernelParams p = two_point_kernel(s);
  const int j = 5;
  const double eta = 1.0;
  const double x_t = 0.4;
  const MixtureDistribution post = exact_denoising_posterior(cloud, sched, p, j, eta, Vec::Constant(1, x_t));
  ASSERT_EQ(post.size(), 4u);
  double wsum = 0.0;
  for (double v : post.weights()) wsum += v;
  EXPECT_NEAR(wsum, 1.0, 1e-12);

  // Unnormalized Bayes integrand on a grid, normalized by the trapezoid rule.
  const double a = sched.alpha(sched.step_from(j)), a_prev = sched.alpha(sched.step_to(j));
  const double sigma = sigma_for_step(sched, j, eta);
  const double kvar = sigma * sigma - s * s;
  ASSERT_GT(kvar, 0.0);
  const double coef = std::sqrt(1.0 - a_prev - sigma * sigma) / std::sqrt(1.0 - a);
  auto joint = [&](double y) {
    double total = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double x0 = pts(0, i);
      const double lik = normal_pdf(x_t, std::sqrt(a) * x0, 1.0 - a);
      const double m = std::sqrt(a_prev) * x0 + coef * (x_t - std::sqrt(a) * x0);
      total += w[static_cast<std::size_t>(i)] * lik * 0.5 * (normal_pdf(y, m + s, kvar) + normal_pdf(y, m - s, kvar));
    }
    return total;
  };
  const double lo = -12.0, hi = 12.0;
  const int n = 24000;
  const double h = (hi - lo) / n;
  double z = 0.0;
  for (int i = 0; i <= n; ++i) z += (i == 0 || i == n ? 0.5 : 1.0) * joint(lo + i * h);
  z *= h;
  RngStream rng(3);
  for (int probe = 0; probe < 20; ++probe) {
    const double y = -3.0 + 6.0 * rng.uniform();
    EXPECT_NEAR(std::exp(post.log_density(Vec::Constant(1, y))), joint(y) / z, 1e-4) << "y=" << y;
  }
}

TEST(Posterior, MixtureDataUsesGaussianPosterior) {
  const Schedule sched = select_substeps(base(), 10);
  const MixtureDistribution data = ring8(3);
  RngStream rng(2);
  const GmmKernelParams p = make_ortho(3, 2, uniform_priors(2), 0.05, rng);
  const MixtureDistribution post = exact_denoising_posterior(data, sched, p, 7, 1.0, Vec::Constant(3, 0.2));
  EXPECT_EQ(post.size(), 16u);
  double wsum = 0.0;
  for (double v : post.weights()) wsum += v;
  EXPECT_NEAR(wsum, 1.0, 1e-12);
}

TEST(Posterior, DimensionMismatch) {
  const Schedule sched = select_substeps(base(), 10);
  const GmmKernelParams p = GmmKernelParams::from_offsets(uniform_priors(1), Mat::Zero(2, 1));
  EXPECT_THROW(exact_denoising_posterior(ring8(), sched, p, 3, 1.0, Vec::Zero(3)), ParameterError);
}

TEST(ForwardDensity, SingleComponentIsQuadratic) {
  const Schedule sched = select_substeps(base(), 4);
  const KernelBank bank = random_bank(KernelScheme::rand, 3, 1, 0.0, 4, 1);
  const Vec x0 = (Vec(3) << 0.5, 0.1, -0.3).finished();
  const Vec x_prev = (Vec(3) << 0.2, 0.0, 0.4).finished();
  const Vec dir = (Vec(3) << 1.0, 2.0, -1.0).finished().normalized();
  const double h = 0.25;
  std::vector<double> f;
  for (int i = 0; i < 9; ++i)
    f.push_back(forward_conditional_logdensity(x0, sched, bank, 1.0, 3, (i - 4) * h * dir, x_prev));
  const double d2 = f[2] - 2 * f[1] + f[0];
  for (int i = 1; i + 1 < 9; ++i) EXPECT_NEAR(f[i + 1] - 2 * f[i] + f[i - 1], d2, 1e-8);
  EXPECT_LT(d2, 0.0);
}

TEST(ForwardDensity, MixtureIsNotQuadraticAndNormalizes) {
  const Schedule sched = select_substeps(base(), 4);
  const double s = 0.2;
  const KernelBank bank(4, two_point_kernel(s));
  const Vec x0 = Vec::Constant(1, 0.8);
  const Vec x_prev = Vec::Constant(1, 0.5);
  const int j = 3;
  const double a = sched.alpha(sched.step_from(j));
  ASSERT_GT(std::pow(sigma_for_step(sched, j, 1.0), 2), s * s);

  const double h = 0.1;
  std::vector<double> d2;
  for (int i = -20; i <= 20; ++i) {
    auto f = [&](double x) { return forward_conditional_logdensity(x0, sched, bank, 1.0, j, Vec::Constant(1, x), x_prev); };
    const double x = std::sqrt(a) * x0[0] + i * h;
    d2.push_back(f(x + h) - 2 * f(x) + f(x - h));
  }
  const auto [mn, mx] = std::minmax_element(d2.begin(), d2.end());
  EXPECT_GT(*mx - *mn, 1e-6);

  const double lo = std::sqrt(a) * x0[0] - 10.0, hi = std::sqrt(a) * x0[0] + 10.0;
  const int n = 8000;
  const double step = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * step;
    total += (i == 0 || i == n ? 0.5 : 1.0) *
             std::exp(forward_conditional_logdensity(x0, sched, bank, 1.0, j, Vec::Constant(1, x), x_prev));
  }
  EXPECT_NEAR(total * step, 1.0, 1e-4);
}

TEST(ForwardDensity, RejectsFinalStep) {
  const Schedule sched = select_substeps(base(), 4);
  const KernelBank bank = random_bank(KernelScheme::rand, 2, 1, 0.0, 4, 1);
  EXPECT_THROW(forward_conditional_logdensity(Vec::Zero(2), sched, bank, 1.0, 1, Vec::Zero(2), Vec::Zero(2)),
               ParameterError);
}

TEST(MixtureHelpers, ToDistributionRoundTrip) {
  ComponentMixture m{{0.25, Vec::Constant(2, 1.0), Mat::Identity(2, 2)}, {0.75, Vec::Constant(2, -1.0), 2.0 * Mat::Identity(2, 2)}};
  const MixtureDistribution d = to_distribution(m);
  const Vec x = (Vec(2) << 0.1, 0.3).finished();
  EXPECT_NEAR(d.log_density(x), mixture_log_density(m, x), 1e-12);
  const auto [mean, cov] = mixture_moments(m);
  EXPECT_LT((mean - d.exact_mean()).norm(), 1e-14);
  EXPECT_LT((cov - d.exact_covariance()).norm(), 1e-14);
  m[1].cov(0, 0) = -1.0;
  EXPECT_THROW(mixture_log_density(m, x), ParameterError);
}
