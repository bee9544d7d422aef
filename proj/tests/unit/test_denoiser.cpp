#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "gmmlab/denoiser.hpp"
#include "gmmlab/errors.hpp"

using namespace gmmlab;

namespace {

const Schedule& paper_schedule() {
  static const Schedule s = Schedule::linear(1000, 0.0015, 0.0195);
  return s;
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST(ExactDenoiser, EpsilonMatchesFiniteDifferenceScore) {
  RngStream rng(17);
  for (const auto& data : {ring8(), grid25(), two_moons_gmm()}) {
    const ExactDenoiser den(data, paper_schedule());
    for (int t : {1, 50, 300, 1000}) {
      const MixtureDistribution marg = noisy_marginal(data, paper_schedule(), t);
      const double a = paper_schedule().alpha(t);
      for (int k = 0; k < 10; ++k) {
        const Vec x = 1.5 * rng.normal_vector(2);
        const Vec fd = fd_gradient([&](const Vec& v) { return marg.log_density(v); }, x);
        EXPECT_LT((den.epsilon(x, t) + std::sqrt(1.0 - a) * fd).lpNorm<Eigen::Infinity>(), 1e-5);
        EXPECT_LT((den.score(x, t) - fd).lpNorm<Eigen::Infinity>(), 1e-5 / std::sqrt(1.0 - a));
      }
    }
  }
}

TEST(ExactDenoiser, SingleGaussianFastPathMatchesGeneralFormula) {
  Mat s(2, 2);
  s << 0.6, 0.2, 0.2, 0.3;
  const Vec m = (Vec(2) << 0.5, -1.0).finished();
  const ExactDenoiser den(MixtureDistribution({1.0}, {m}, {s}), paper_schedule());
  const double a = paper_schedule().alpha(200);
  const Mat c = a * s + (1.0 - a) * Mat::Identity(2, 2);
  const Vec x = (Vec(2) << 0.3, 0.1).finished();
  const Vec expected = std::sqrt(1.0 - a) * c.inverse() * (x - std::sqrt(a) * m);
  EXPECT_LT((den.epsilon(x, 200) - expected).norm(), 1e-12);
}

TEST(ExactDenoiser, PointCloudPosteriorMean) {
  Batch pts(1, 2);
  pts << -1.0, 1.0;
  const ExactDenoiser den(PointCloud(pts), paper_schedule());
  // Symmetric cloud: E[x0 | x_t = 0] = 0.
  EXPECT_NEAR(den.posterior_mean(Vec::Zero(1), 300)[0], 0.0, 1e-12);
  // Far on the right the posterior concentrates on +1.
  EXPECT_NEAR(den.posterior_mean(Vec::Constant(1, 5.0), 10)[0], 1.0, 1e-9);
}

TEST(ExactDenoiser, SingularStep) {
  const Schedule s = Schedule::from_betas({1e-300, 0.5});
  const ExactDenoiser den(ring8(), s);
  EXPECT_THROW(den.epsilon(Vec::Zero(2), 1), SingularStepError);
  EXPECT_THROW(den.epsilon(Vec::Zero(3), 2), ParameterError);
}

TEST(ExactDenoiser, ClassPosteriorSumsToOne) {
  const ExactDenoiser den(two_moons_gmm(), paper_schedule());
  RngStream rng(3);
  for (int k = 0; k < 10; ++k) {
    const auto post = den.class_posterior(rng.normal_vector(2), 100);
    ASSERT_EQ(post.size(), 2u);
    EXPECT_NEAR(post[0].second + post[1].second, 1.0, 1e-12);
  }
}

TEST(Guidance, ClassifierGradientMatchesFiniteDifference) {
  const ExactDenoiser den(two_moons_gmm(), paper_schedule());
  RngStream rng(23);
  for (int t : {5, 100, 400}) {
    for (int k = 0; k < 10; ++k) {
      const Vec x = rng.normal_vector(2);
      const Vec fd = fd_gradient([&](const Vec& v) { return den.class_log_posterior(v, t, 1); }, x);
      EXPECT_LT((den.class_log_posterior_gradient(x, t, 1) - fd).lpNorm<Eigen::Infinity>(), 1e-5);
    }
  }
}

TEST(Guidance, ClassifierModeFormula) {
  const ExactDenoiser den(two_moons_gmm(), paper_schedule());
  const GuidanceConfig cfg{GuidanceConfig::Mode::classifier, 2.0, 0};
  const Vec x = (Vec(2) << 0.4, 0.2).finished();
  const double a = paper_schedule().alpha(250);
  const Vec expected = den.epsilon(x, 250) - 2.0 * std::sqrt(1.0 - a) * den.class_log_posterior_gradient(x, 250, 0);
  EXPECT_LT((guided_epsilon(den, den, x, 250, cfg) - expected).norm(), 1e-15);
}

TEST(Guidance, ClassifierFreeEndpoints) {
  const ExactDenoiser den(two_moons_gmm(), paper_schedule());
  const Vec x = (Vec(2) << -0.3, 0.8).finished();
  const Vec uncond = den.epsilon(x, 100);
  const Vec cond = den.epsilon(x, 100, 1);
  EXPECT_EQ(guided_epsilon(den, den, x, 100, {GuidanceConfig::Mode::classifier_free, 0.0, 1}), uncond);
  EXPECT_EQ(guided_epsilon(den, den, x, 100, {GuidanceConfig::Mode::classifier_free, 1.0, 1}), cond);
  const Vec w3 = guided_epsilon(den, den, x, 100, {GuidanceConfig::Mode::classifier_free, 3.0, 1});
  EXPECT_LT((w3 - (-2.0 * uncond + 3.0 * cond)).norm(), 1e-14);
}

TEST(Guidance, ConditionalEpsilonMatchesRestrictedMixture) {
  const MixtureDistribution data = two_moons_gmm();
  const ExactDenoiser full(data, paper_schedule());
  const ExactDenoiser restricted(data.restricted_to(1), paper_schedule());
  const Vec x = (Vec(2) << 0.1, -0.4).finished();
  EXPECT_LT((full.epsilon(x, 60, 1) - restricted.epsilon(x, 60)).norm(), 1e-12);
}

TEST(Guidance, Validation) {
  const ExactDenoiser labeled(two_moons_gmm(), paper_schedule());
  EXPECT_THROW(validate_guidance({GuidanceConfig::Mode::classifier, 1.0, 9}, labeled), ParameterError);
  EXPECT_THROW(validate_guidance({GuidanceConfig::Mode::classifier, -1.0, 0}, labeled), ParameterError);
  const ExactDenoiser unlabeled(MixtureDistribution({1.0}, {Vec::Zero(2)}, {Mat::Identity(2, 2)}), paper_schedule());
  EXPECT_THROW(validate_guidance({GuidanceConfig::Mode::classifier_free, 1.0, 0}, unlabeled), ParameterError);
  EXPECT_NO_THROW(validate_guidance({GuidanceConfig::Mode::none, 0.0, 0}, unlabeled));
  EXPECT_EQ(parse_guidance_mode("cfg"), GuidanceConfig::Mode::classifier_free);
  EXPECT_THROW(parse_guidance_mode("bogus"), ParameterError);
}
