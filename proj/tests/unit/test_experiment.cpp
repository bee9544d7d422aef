#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "gmmlab/config.hpp"
#include "gmmlab/errors.hpp"
#include "gmmlab/experiment.hpp"

using namespace gmmlab;

namespace {

ExperimentConfig config_from(const std::string& text) { return make_config(ConfigMap::parse(text)); }

CellResult row(int steps, double eta, double s, double mmd2, bool ok = true) {
  CellResult r;
  r.cell.kind = SamplerKind::ddim_gmm;
  r.cell.kernel = KernelChoice{false, KernelScheme::ortho_vub};
  r.cell.components = 8;
  r.cell.steps = steps;
  r.cell.eta = eta;
  r.cell.scale = s;
  r.metrics.mmd2 = mmd2;
  r.ok = ok;
  r.status = ok ? "ok" : "error: x";
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  ConfigMap map = ConfigMap::parse("# comment\nsampler.steps = 10, 20\n\nkernel.scale = 0.1,1\n");
  map.set("sampler.steps=50");
  map.set("metrics.mmd_bandwidth", "median");
  const ExperimentConfig c = make_config(map);
  EXPECT_EQ(c.steps, std::vector<int>{50});
  EXPECT_EQ(c.scales, (std::vector<double>{0.1, 1.0}));
  EXPECT_FALSE(c.metrics.mmd_bandwidth.has_value());
  EXPECT_EQ(c.metrics.swd_projections, 128);
  EXPECT_EQ(c.schedule.total_steps, 1000);
}

TEST(Config, Errors) {
  try {
    config_from("kernel.bogus = 1\n");
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_EQ(e.field(), "kernel.bogus");
  }
  EXPECT_THROW(config_from("sampler.chains = 10, 20\n"), ParameterError);
  EXPECT_THROW(config_from("sampler.eta = 1.5\n"), ParameterError);
  EXPECT_THROW(config_from("kernel.scheme = gmm_fancy\n"), ParameterError);
  EXPECT_THROW(config_from("sampler.steps = ten\n"), ParameterError);
  EXPECT_THROW(config_from("metrics.mmd_bandwidth = -1\n"), ParameterError);
  EXPECT_THROW(ConfigMap::parse("no equals sign\n"), ParameterError);
  EXPECT_THROW(ConfigMap::load("/nonexistent/gmmlab.cfg"), std::ios_base::failure);
}

TEST(Plan, CanonicalizationDeduplicates) {
  const ExperimentConfig c = config_from(
      "sampler.kind = ddpm, ddim, ddim_gmm\n"
      "sampler.steps = 10, 20\n"
      "sampler.eta = 0, 1\n"
      "kernel.scheme = gaussian, gmm_ortho_vub\n"
      "kernel.scale = 0.1, 1\n");
  const SweepPlan plan = plan_sweep(c);
  EXPECT_EQ(plan.cross_product, 3u * 2 * 2 * 2 * 2);
  // ddpm: 1 cell; ddim: 4 (steps x eta); ddim_gmm+gaussian folds into ddim;
  // ddim_gmm+vub: 4 x 2 scales.
  EXPECT_EQ(plan.cells.size(), 1u + 4u + 8u);
  EXPECT_EQ(plan.deduplicated, plan.cross_product - plan.cells.size());
  for (std::size_t i = 0; i < plan.cells.size(); ++i) EXPECT_EQ(plan.cells[i].index, i);
  EXPECT_EQ(method_name(plan.cells[0]), "ddpm");
  EXPECT_EQ(plan.cells[0].steps, 1000);
  EXPECT_EQ(method_name(plan.cells.back()), "ddim_gmm_ortho_vub");
}

TEST(Plan, GuidanceScaleWithoutModeFolds) {
  const SweepPlan plan = plan_sweep(config_from("guidance.mode = none, classifier\nguidance.scale = 0, 2\n"));
  EXPECT_EQ(plan.cross_product, 4u);
  EXPECT_EQ(plan.cells.size(), 3u);
}

TEST(BestS, LowestMmdWithTiesToLowerScale) {
  SweepTable t;
  t.rows = {row(10, 1.0, 1.0, 0.02), row(10, 1.0, 0.1, 0.02), row(10, 1.0, 10.0, 0.05),
            row(20, 1.0, 10.0, 0.01), row(20, 1.0, 1.0, 0.03), row(20, 1.0, 0.01, -1.0, false)};
  const auto best = best_s_rows(t);
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0], 1u);
  EXPECT_EQ(best[1], 3u);
}

TEST(Summary, StarOnGroupBestWithEarlierTieWinning) {
  SweepTable t;
  t.rows = {row(10, 0.0, 0.1, 0.03), row(10, 0.0, 1.0, 0.03), row(10, 1.0, 1.0, 0.07), row(10, 1.0, 0.1, -0.5, false)};
  const auto best = summary_best_rows(t);
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0], 0u);
  EXPECT_EQ(best[1], 2u);
  std::ostringstream out;
  emit_summary(t, out);
  int stars = 0;
  for (const auto& line : lines_of(out.str()))
    if (line.size() >= 3 && line.compare(line.size() - 3, 3, "  *") == 0) ++stars;
  EXPECT_EQ(stars, 2);
  EXPECT_NE(out.str().find("error: x"), std::string::npos);
}

TEST(Csv, HeaderAndColumns) {
  std::ostringstream out;
  write_csv({row(10, 1.0, 0.1, 0.02)}, out);
  const auto lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "# gmm-ddim-lab v1");
  EXPECT_EQ(lines[1],
            "method,steps,eta,K,s,share,guidance_mode,guidance_scale,seed,mmd2,sliced_w2,mean_err,cov_err,"
            "avg_loglik,clip_events,wall_time_ms,status");
  EXPECT_EQ(std::count(lines[2].begin(), lines[2].end(), ','), 16);
}

TEST(Sweep, DeterministicApartFromWallTime) {
  const ExperimentConfig c = config_from(
      "sampler.kind = ddim, ddim_gmm\n"
      "sampler.steps = 5\n"
      "sampler.eta = 1\n"
      "kernel.scheme = gmm_ortho_vub\n"
      "kernel.components = 3\n"
      "kernel.scale = 0, 0.5\n"
      "data.dim = 4\n"
      "sampler.chains = 200\n"
      "metrics.eval_samples = 200\n"
      "metrics.swd_projections = 16\n"
      "sampler.seed = 42\n");
  const SweepTable a = run_sweep(c);
  const SweepTable b = run_sweep(c);
  ASSERT_TRUE(a.all_ok());
  ASSERT_EQ(a.rows.size(), 3u);
  std::ostringstream sa, sb;
  write_csv(a.rows, sa, false);
  write_csv(b.rows, sb, false);
  EXPECT_EQ(sa.str(), sb.str());
  // Common random numbers: s = 0 reproduces the plain DDIM cell exactly.
  EXPECT_EQ(a.rows[0].metrics.mmd2, a.rows[1].metrics.mmd2);
  EXPECT_EQ(a.rows[0].metrics.sliced_w2, a.rows[1].metrics.sliced_w2);
}

TEST(Sweep, CellErrorsAreRecorded) {
  // K must stay below D; K = 4 in D = 2 fails inside the cell.
  const ExperimentConfig c = config_from(
      "sampler.kind = ddim_gmm\nkernel.scheme = gmm_ortho\nkernel.components = 4\nsampler.chains = 20\n"
      "metrics.eval_samples = 20\n");
  const SweepTable t = run_sweep(c);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_FALSE(t.all_ok());
  EXPECT_EQ(t.rows[0].status.rfind("error:", 0), 0u);
}

TEST(Verify, DefaultOraclesPass) {
  VerifyOptions o;
  o.chains = 20000;
  const auto rows = run_verification(o);
  ASSERT_FALSE(rows.empty());
  int passes = 0;
  for (const auto& r : rows) {
    EXPECT_NE(r.status, "fail") << r.step << " " << r.quantity << " " << r.value << " > " << r.tolerance;
    passes += r.status == "pass";
  }
  EXPECT_GT(passes, 10);
  std::ostringstream out;
  write_verify_csv(rows, out);
  const auto lines = lines_of(out.str());
  EXPECT_EQ(lines[0], "# gmm-ddim-lab v1");
  EXPECT_EQ(lines[1], "step,quantity,value,tolerance,status");
  EXPECT_EQ(lines.size(), rows.size() + 2);
}

TEST(Verify, UnknownOracle) {
  VerifyOptions o;
  o.oracle = "astrology";
  EXPECT_THROW(run_verification(o), ParameterError);
}
