#include "gmmlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <tuple>

#include "gmmlab/errors.hpp"
#include "gmmlab/gmm_kernel.hpp"
#include "gmmlab/verification.hpp"

namespace gmmlab {

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Table cells: fewer digits so columns stay aligned.
std::string cell(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5g", v);
  return buf;
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

bool guided(const SweepCell& c) { return c.guidance.mode != GuidanceConfig::Mode::none; }

auto cell_key(const SweepCell& c) {
  return std::make_tuple(static_cast<int>(c.kind), c.steps, c.eta, c.kernel.gaussian,
                         static_cast<int>(c.kernel.scheme), c.components, c.scale, c.share,
                         static_cast<int>(c.guidance.mode), c.guidance.scale, c.guidance.target_label);
}

MixtureDistribution load_data(const DataSpec& spec) {
  if (!spec.table.empty()) return load_component_table(spec.table);
  return builtin_distribution(spec.name, spec.dim);
}

}  // namespace

std::string method_name(const SweepCell& cell) {
  if (cell.kind == SamplerKind::ddim_gmm) return "ddim_" + to_string(cell.kernel.scheme);
  return to_string(cell.kind);
}

SweepPlan plan_sweep(const ExperimentConfig& config) {
  SweepPlan plan;
  std::vector<decltype(cell_key(SweepCell{}))> seen;
  for (SamplerKind kind : config.kinds)
    for (int steps : config.steps)
      for (double eta : config.etas)
        for (const KernelChoice& kernel : config.schemes)
          for (int k : config.components)
            for (double s : config.scales)
              for (bool share : config.shares)
                for (auto mode : config.guidance_modes)
                  for (double w : config.guidance_scales) {
                    ++plan.cross_product;
                    SweepCell c;
                    c.kind = kind;
                    c.steps = steps;
                    c.eta = eta;
                    c.kernel = kernel;
                    c.components = k;
                    c.scale = s;
                    c.share = share;
                    c.guidance = GuidanceConfig{mode, w, config.guidance_label};
                    if (c.kind == SamplerKind::ddim_gmm && c.kernel.gaussian) c.kind = SamplerKind::ddim;
                    if (c.kind != SamplerKind::ddim_gmm) {
                      c.kernel = KernelChoice{};
                      c.components = 1;
                      c.scale = 0.0;
                      c.share = false;
                    }
                    if (c.kind == SamplerKind::ddpm) {
                      c.steps = config.schedule.total_steps;
                      c.eta = 1.0;
                    }
                    if (!guided(c)) c.guidance = GuidanceConfig{};
                    const auto key = cell_key(c);
                    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
                      ++plan.deduplicated;
                      continue;
                    }
                    seen.push_back(key);
                    c.index = plan.cells.size();
                    plan.cells.push_back(c);
                  }
  return plan;
}

ExperimentContext::ExperimentContext(const ExperimentConfig& config)
    : config_(config),
      data_(std::make_unique<MixtureDistribution>(load_data(config.data))),
      schedule_(Schedule::linear(config.schedule.total_steps, config.schedule.beta_start, config.schedule.beta_end)),
      denoiser_(std::make_unique<ExactDenoiser>(*data_, schedule_)) {
  RngStream ref_rng = RngStream(config_.seed).split(1);
  reference_ = data_->sample(config_.eval_samples, ref_rng);
  const bool any_guidance = std::any_of(config_.guidance_modes.begin(), config_.guidance_modes.end(),
                                        [](auto m) { return m != GuidanceConfig::Mode::none; });
  if (any_guidance && data_->has_labels() && data_->has_label(config_.guidance_label)) {
    RngStream cls_rng = RngStream(config_.seed).split(5);
    class_reference_.emplace_back(config_.guidance_label,
                                  data_->restricted_to(config_.guidance_label).sample(config_.eval_samples, cls_rng));
  }
}

const Batch& ExperimentContext::reference(std::optional<int> label) const {
  if (!label) return reference_;
  for (const auto& [l, batch] : class_reference_)
    if (l == *label) return batch;
  throw ParameterError("guidance.label", "no reference draw for label " + std::to_string(*label));
}

std::uint64_t ExperimentContext::chain_seed() const { return RngStream(config_.seed).split(2).key(); }
RngStream ExperimentContext::kernel_stream() const { return RngStream(config_.seed).split(3); }
std::uint64_t ExperimentContext::projection_seed() const { return RngStream(config_.seed).split(4).key(); }

CellResult run_cell(const ExperimentContext& context, const SweepCell& cell, SamplerRun* run) {
  const ExperimentConfig& config = context.config();
  const auto start = std::chrono::steady_clock::now();
  CellResult r;
  r.cell = cell;
  r.seed = config.seed;
  try {
    SamplerConfig sc;
    sc.kind = cell.kind;
    sc.eta = cell.eta;
    sc.steps = cell.steps;
    sc.guidance = cell.guidance;
    sc.record_trajectory = run != nullptr && config.record_trajectory;
    if (cell.kind == SamplerKind::ddim_gmm) {
      KernelBankSpec spec;
      spec.scheme = cell.kernel.scheme;
      spec.dimension = context.data().dim();
      spec.components = cell.components;
      if (config.priors) spec.priors = Eigen::Map<const Vec>(config.priors->data(), static_cast<Eigen::Index>(config.priors->size()));
      spec.scale = cell.scale;
      spec.share_across_steps = cell.share;
      RngStream krng = context.kernel_stream();
      sc.kernel_bank = std::make_shared<const KernelBank>(build_kernel_bank(spec, cell.steps, krng));
    }
    std::optional<int> label;
    if (guided(cell)) {
      validate_guidance(cell.guidance, context.denoiser());
      label = cell.guidance.target_label;
    }
    SamplerRun sr = run_sampler(sc, context.denoiser(), context.schedule(), config.chains, context.chain_seed(),
                                config.threads);
    const MixtureDistribution truth = label ? context.data().restricted_to(*label) : context.data();
    r.metrics = evaluate_samples(sr.finals, context.reference(label), truth, config.metrics, context.projection_seed());
    r.metrics.seed = config.seed;
    r.clip_events = sr.clip_events;
    if (run) *run = std::move(sr);
  } catch (const std::exception& e) {
    r.ok = false;
    r.status = "error: " + csv_safe(e.what());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.metrics = MetricsReport{nan, nan, nan, nan, nan, config.seed};
  }
  r.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

bool SweepTable::all_ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const CellResult& r) { return r.ok; });
}

SweepTable run_sweep(const ExperimentConfig& config) {
  SweepTable table;
  table.plan = plan_sweep(config);
  const ExperimentContext context(config);
  for (const auto& cell : table.plan.cells) table.rows.push_back(run_cell(context, cell));
  return table;
}

void write_csv(const std::vector<CellResult>& rows, std::ostream& out, bool include_wall_time) {
  out << kCsvHeaderLine << '\n'
      << "method,steps,eta,K,s,share,guidance_mode,guidance_scale,seed,mmd2,sliced_w2,mean_err,cov_err,"
         "avg_loglik,clip_events,wall_time_ms,status\n";
  for (const auto& r : rows) {
    const auto& c = r.cell;
    out << method_name(c) << ',' << c.steps << ',' << fmt(c.eta) << ',' << c.components << ',' << fmt(c.scale) << ','
        << (c.share ? "true" : "false") << ',' << to_string(c.guidance.mode) << ',' << fmt(c.guidance.scale) << ','
        << r.seed << ',' << fmt(r.metrics.mmd2) << ',' << fmt(r.metrics.sliced_w2) << ','
        << fmt(r.metrics.moment_mean_err) << ',' << fmt(r.metrics.moment_cov_err) << ','
        << fmt(r.metrics.avg_loglik) << ',' << r.clip_events << ','
        << (include_wall_time ? fmt(std::round(r.wall_time_ms * 1000.0) / 1000.0) : std::string("0")) << ','
        << r.status << '\n';
  }
}

std::vector<std::size_t> best_s_rows(const SweepTable& table) {
  std::vector<std::tuple<std::string, int, double, int, bool, int, double>> keys;
  std::vector<std::size_t> best;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    if (!r.ok || r.cell.kind != SamplerKind::ddim_gmm) continue;
    const auto& c = r.cell;
    const auto key = std::make_tuple(method_name(c), c.steps, c.eta, c.components, c.share,
                                     static_cast<int>(c.guidance.mode), c.guidance.scale);
    const auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      best.push_back(i);
      continue;
    }
    std::size_t& b = best[static_cast<std::size_t>(it - keys.begin())];
    const auto& cur = table.rows[b];
    if (r.metrics.mmd2 < cur.metrics.mmd2 || (r.metrics.mmd2 == cur.metrics.mmd2 && c.scale < cur.cell.scale)) b = i;
  }
  return best;
}

std::vector<std::size_t> summary_best_rows(const SweepTable& table) {
  std::vector<std::pair<int, double>> keys;
  std::vector<std::size_t> best;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    const auto key = std::make_pair(r.cell.steps, r.cell.eta);
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      best.push_back(std::numeric_limits<std::size_t>::max());
      it = keys.end() - 1;
    }
    std::size_t& b = best[static_cast<std::size_t>(it - keys.begin())];
    if (!r.ok) continue;
    if (b == std::numeric_limits<std::size_t>::max() || r.metrics.mmd2 < table.rows[b].metrics.mmd2) b = i;
  }
  return best;
}

void emit_summary(const SweepTable& table, std::ostream& out) {
  const auto best = summary_best_rows(table);
  std::vector<std::pair<int, double>> groups;
  for (const auto& r : table.rows) {
    const auto key = std::make_pair(r.cell.steps, r.cell.eta);
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  out << "cells: " << table.plan.cells.size() << " (cross product " << table.plan.cross_product << ", "
      << table.plan.deduplicated << " deduplicated)\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out << "\nsteps=" << groups[g].first << " eta=" << fmt(groups[g].second) << '\n';
    out << "  " << std::left << std::setw(22) << "method" << std::setw(4) << "K" << std::setw(8) << "s"
        << std::setw(7) << "share" << std::setw(18) << "guidance" << std::right << std::setw(14) << "mmd2"
        << std::setw(14) << "sliced_w2" << std::setw(12) << "mean_err" << std::setw(12) << "cov_err" << "  best\n";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& r = table.rows[i];
      if (std::make_pair(r.cell.steps, r.cell.eta) != groups[g]) continue;
      const auto& c = r.cell;
      const std::string guide =
          c.guidance.mode == GuidanceConfig::Mode::none ? "none" : to_string(c.guidance.mode) + "@" + fmt(c.guidance.scale);
      out << "  " << std::left << std::setw(22) << method_name(c) << std::setw(4) << c.components << std::setw(8)
          << fmt(c.scale) << std::setw(7) << (c.share ? "yes" : "no") << std::setw(18) << guide << std::right;
      if (r.ok) {
        out << std::setw(14) << cell(r.metrics.mmd2) << std::setw(14) << cell(r.metrics.sliced_w2) << std::setw(12)
            << cell(r.metrics.moment_mean_err) << std::setw(12) << cell(r.metrics.moment_cov_err)
            << (best[g] == i ? "  *" : "") << '\n';
      } else {
        out << "  " << r.status << '\n';
      }
    }
  }
}

void write_samples_csv(const SamplerRun& run, const Schedule& schedule, std::ostream& out) {
  const Eigen::Index d = run.finals.rows();
  out << kCsvHeaderLine << '\n' << "step,chain";
  for (Eigen::Index i = 0; i < d; ++i) out << ",x" << i;
  out << '\n';
  auto emit = [&](int step, const Batch& b) {
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      out << step << ',' << c;
      for (Eigen::Index i = 0; i < d; ++i) out << ',' << fmt(b(i, c));
      out << '\n';
    }
  };
  if (run.trajectories.empty()) {
    emit(0, run.finals);
    return;
  }
  const int steps = run.config.kind == SamplerKind::ddpm ? schedule.total_steps() : run.config.steps;
  const Schedule sub = select_substeps(schedule, steps);
  const int s_count = sub.num_substeps();
  for (std::size_t i = 0; i < run.trajectories.size(); ++i)
    emit(sub.step_to(s_count - static_cast<int>(i)), run.trajectories[i]);
}

// ---------------------------------------------------------------------------
// verify suite

namespace {

void add(std::vector<VerifyRow>& rows, std::string step, std::string quantity, double value, double tol,
         bool pass) {
  rows.push_back({std::move(step), std::move(quantity), value, tol, pass ? "pass" : "fail"});
}

void skip(std::vector<VerifyRow>& rows, std::string step, std::string quantity) {
  rows.push_back({std::move(step), std::move(quantity), std::numeric_limits<double>::quiet_NaN(),
                  std::numeric_limits<double>::quiet_NaN(), "skip"});
}

KernelBank verify_bank(const VerifyOptions& o, int steps, double scale, int components, RngStream& rng) {
  KernelBankSpec spec;
  spec.scheme = o.scheme;
  spec.dimension = o.dim;
  spec.components = components;
  spec.scale = scale;
  return build_kernel_bank(spec, steps, rng);
}

void verify_moments(const VerifyOptions& o, const Schedule& sched, std::vector<VerifyRow>& rows) {
  RngStream master(o.seed);
  RngStream brng = master.split(10);
  const KernelBank bank = verify_bank(o, sched.num_substeps(), o.scale, o.components, brng);
  RngStream xrng = master.split(11);
  const Vec x0 = xrng.normal_vector(o.dim);
  try {
    const MomentReport cf = closed_form_marginals(x0, sched, bank, o.eta);
    for (const auto& s : cf.steps) {
      add(rows, std::to_string(s.step), "closed_form.mean_error", s.mean_error, 1e-10, s.mean_error < 1e-10);
      add(rows, std::to_string(s.step), "closed_form.cov_error", s.cov_error, 1e-9, s.cov_error < 1e-9);
    }
  } catch (const CapExceededError&) {
    skip(rows, "-", "closed_form.component_cap");
  }
  RngStream mrng = master.split(12);
  const MomentReport mc = monte_carlo_marginals(x0, sched, bank, o.eta, KernelVariant::full_cov, o.chains, mrng);
  if (!mc.simulable) {
    skip(rows, "-", "monte_carlo.indefinite_kernel");
    return;
  }
  for (const auto& s : mc.steps) {
    add(rows, std::to_string(s.step), "monte_carlo.mean_error_l2", s.mean_error_l2, 3.0 * s.mean_stderr,
        s.mean_error_l2 <= 3.0 * s.mean_stderr);
    add(rows, std::to_string(s.step), "monte_carlo.cov_error", s.cov_error, 3.0 * s.cov_stderr,
        s.cov_error <= 3.0 * s.cov_stderr);
  }
}

void verify_constraints(const VerifyOptions& o, const Schedule& sched, std::vector<VerifyRow>& rows) {
  RngStream brng = RngStream(o.seed).split(20);
  const KernelBank bank = verify_bank(o, sched.num_substeps(), o.scale, o.components, brng);
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const ConstraintReport c = validate_constraints(bank[j]);
    const std::string step = "bank" + std::to_string(j + 1);
    add(rows, step, "constraints.prior_sum_residual", c.prior_sum_residual, 1e-12, c.prior_sum_residual <= 1e-12);
    add(rows, step, "constraints.mean_residual", c.mean_residual, 1e-10, c.mean_residual <= 1e-10);
    add(rows, step, "constraints.covariance_residual", c.covariance_residual, 1e-8, c.covariance_residual <= 1e-8);
    add(rows, step, "constraints.bound_violations", c.bound_violations, 0.0, c.bound_violations == 0);
  }
}

void verify_elbo(const VerifyOptions& o, const Schedule& sched, std::vector<VerifyRow>& rows) {
  RngStream brng = RngStream(o.seed).split(30);
  const KernelBank bank = verify_bank(o, sched.num_substeps(), o.scale, o.components, brng);
  // The last reverse step targets alpha = 1 where sigma vanishes; the Gaussian
  // likelihood width is taken as the noise level at tau[0].
  const double sigma_1 = std::sqrt(1.0 - sched.alpha(sched.tau().front()));
  const ElboReport rep = elbo_weights(sched, bank, o.eta, sigma_1);
  for (std::size_t i = 0; i < rep.steps.size(); ++i) {
    const int j = sched.num_substeps() - static_cast<int>(i);
    const double sigma = sigma_for_step(sched, j, o.eta);
    const auto& p = kernel_for_step(bank, j);
    double sum = 0.0;
    for (Eigen::Index k = 0; k < p.components(); ++k) {
      double nu = std::numeric_limits<double>::infinity();
      for (Eigen::Index r = 0; r < p.dim(); ++r) nu = std::min(nu, std::max(0.0, sigma * sigma - p.cov_diag_offsets(r, k)));
      sum += p.priors[k] / std::max(nu, kNuFloor);
    }
    const double a = sched.alpha(sched.step_from(j));
    const double expected = sum * (1.0 - a) / (2.0 * a);
    const double rel = std::abs(rep.steps[i].weight - expected) / expected;
    add(rows, std::to_string(rep.steps[i].step), "elbo.weight_rel_error", rel, 1e-12, rel <= 1e-12);
  }
  const double a1 = sched.alpha(sched.tau().front());
  const double k2 = (1.0 - a1) / (2.0 * sigma_1 * sigma_1 * a1);
  const double rel = std::abs(rep.k2_coefficient - k2) / k2;
  add(rows, std::to_string(sched.tau().front()), "elbo.k2_rel_error", rel, 1e-12, rel <= 1e-12);
}

void verify_reduction(const VerifyOptions& o, const Schedule& base, std::vector<VerifyRow>& rows) {
  const ExactDenoiser den(ring8(o.dim), base);
  SamplerConfig ddim;
  ddim.kind = SamplerKind::ddim;
  ddim.eta = o.eta;
  ddim.steps = o.steps;
  ddim.record_trajectory = true;
  const SamplerRun ref = run_sampler(ddim, den, base, 64, o.seed);
  auto compare = [&](const std::string& name, int components, double scale) {
    RngStream brng = RngStream(o.seed).split(40);
    SamplerConfig gmm = ddim;
    gmm.kind = SamplerKind::ddim_gmm;
    gmm.kernel_bank = std::make_shared<const KernelBank>(verify_bank(o, o.steps, scale, components, brng));
    const SamplerRun run = run_sampler(gmm, den, base, 64, o.seed);
    double diff = 0.0;
    for (std::size_t i = 0; i < ref.trajectories.size(); ++i)
      diff = std::max(diff, (ref.trajectories[i] - run.trajectories[i]).cwiseAbs().maxCoeff());
    add(rows, "-", name, diff, 0.0, diff == 0.0);
  };
  compare("reduction.s0_max_abs_diff", o.components, 0.0);
  compare("reduction.k1_max_abs_diff", 1, o.scale);
}

void verify_score(const VerifyOptions& o, const Schedule& sched, std::vector<VerifyRow>& rows) {
  RngStream rng = RngStream(o.seed).split(50);
  const MixtureDistribution data = ring8(o.dim);
  const ExactDenoiser den(data, sched);
  const double h = 1e-5;
  for (int t : {1, 10, 100, sched.total_steps()}) {
    if (t > sched.total_steps()) continue;
    const MixtureDistribution marg = noisy_marginal(data, sched, t);
    const double a = sched.alpha(t);
    double worst = 0.0;
    for (int probe = 0; probe < 25; ++probe) {
      const Vec x = 1.5 * rng.normal_vector(o.dim);
      Vec fd(o.dim);
      for (int i = 0; i < o.dim; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        fd[i] = (marg.log_density(xp) - marg.log_density(xm)) / (2.0 * h);
      }
      worst = std::max(worst, (den.epsilon(x, t) + std::sqrt(1.0 - a) * fd).lpNorm<Eigen::Infinity>());
    }
    add(rows, std::to_string(t), "score.eps_vs_fd_inf", worst, 1e-5, worst < 1e-5);
  }
}

void verify_posterior(const VerifyOptions& o, const Schedule& sched, std::vector<VerifyRow>& rows) {
  RngStream rng = RngStream(o.seed).split(60);
  Batch pts(o.dim, 3);
  for (int i = 0; i < 3; ++i) pts.col(i) = rng.normal_vector(o.dim);
  const PointCloud cloud(pts);
  RngStream brng = rng.split(1);
  const KernelBank bank = verify_bank(o, sched.num_substeps(), o.scale, o.components, brng);
  for (int j = sched.num_substeps(); j >= 2; --j) {
    const Vec x_t = rng.normal_vector(o.dim);
    std::optional<MixtureDistribution> maybe;
    try {
      maybe.emplace(exact_denoising_posterior(cloud, sched, kernel_for_step(bank, j), j, o.eta, x_t,
                                              KernelCovariance::full));
    } catch (const ParameterError&) {
      skip(rows, std::to_string(sched.step_from(j)), "posterior.indefinite_kernel");
      continue;
    }
    const MixtureDistribution& post = *maybe;
    double sum = 0.0;
    for (double w : post.weights()) sum += w;
    add(rows, std::to_string(sched.step_from(j)), "posterior.weight_sum_error", std::abs(sum - 1.0), 1e-12,
        std::abs(sum - 1.0) <= 1e-12);
  }
}

}  // namespace

std::vector<VerifyRow> run_verification(const VerifyOptions& o) {
  static const std::vector<std::string> oracles{"moments", "constraints", "elbo", "reduction", "score", "posterior"};
  if (o.oracle != "all" && std::find(oracles.begin(), oracles.end(), o.oracle) == oracles.end())
    throw ParameterError("oracle", "unknown oracle '" + o.oracle + "'");
  if (o.steps < 1) throw ParameterError("S", "must be >= 1");
  if (o.dim < 2) throw ParameterError("D", "must be >= 2");
  if (o.components < 1 || o.components >= o.dim) throw ParameterError("K", "need 1 <= K < D");
  const Schedule base = Schedule::linear(o.schedule.total_steps, o.schedule.beta_start, o.schedule.beta_end);
  const Schedule sched = select_substeps(base, o.steps);
  std::vector<VerifyRow> rows;
  auto want = [&](const char* name) { return o.oracle == "all" || o.oracle == name; };
  if (want("moments")) verify_moments(o, sched, rows);
  if (want("constraints")) verify_constraints(o, sched, rows);
  if (want("elbo")) verify_elbo(o, sched, rows);
  if (want("reduction")) verify_reduction(o, base, rows);
  if (want("score")) verify_score(o, base, rows);
  if (want("posterior")) verify_posterior(o, sched, rows);
  return rows;
}

void write_verify_csv(const std::vector<VerifyRow>& rows, std::ostream& out) {
  out << kCsvHeaderLine << '\n' << "step,quantity,value,tolerance,status\n";
  for (const auto& r : rows)
    out << r.step << ',' << r.quantity << ',' << fmt(r.value) << ',' << fmt(r.tolerance) << ',' << r.status << '\n';
}

}  // namespace gmmlab
