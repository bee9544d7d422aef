#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gmmlab/config.hpp"
#include "gmmlab/errors.hpp"
#include "gmmlab/experiment.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct CommonFlags {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "config file with dotted key = value lines");
  cmd->add_option("--out", f.out, "output CSV path (stdout when omitted)");
  cmd->add_option("--seed", f.seed, "master seed (overrides sampler.seed)");
  cmd->add_option("--set", f.overrides, "override a config key, key=value (repeatable)");
}

/// File values first, then --set, then the dedicated flags.
gmmlab::ConfigMap build_map(const CommonFlags& f, const std::vector<std::pair<std::string, std::string>>& defaults = {}) {
  gmmlab::ConfigMap map;
  for (const auto& [k, v] : defaults) map.set(k, v);
  if (!f.config_path.empty()) {
    const auto file = gmmlab::ConfigMap::load(f.config_path);
    for (const auto& [k, v] : file.values()) map.set(k, v);
  }
  for (const auto& o : f.overrides) map.set(o);
  if (f.seed) map.set("sampler.seed", std::to_string(*f.seed));
  if (!f.out.empty()) map.set("output.path", f.out);
  return map;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot open '" + path + "' for writing");
  return out;
}

int run_table(const gmmlab::ExperimentConfig& cfg) {
  const auto plan = gmmlab::plan_sweep(cfg);
  std::cerr << "sweep: " << plan.cells.size() << " cells (cross product " << plan.cross_product << ", "
            << plan.deduplicated << " deduplicated)\n";
  const gmmlab::SweepTable table = gmmlab::run_sweep(cfg);
  if (cfg.out.empty()) {
    gmmlab::write_csv(table.rows, std::cout);
    gmmlab::emit_summary(table, std::cerr);
  } else {
    auto out = open_out(cfg.out);
    gmmlab::write_csv(table.rows, out);
    std::vector<gmmlab::CellResult> best;
    for (std::size_t i : gmmlab::best_s_rows(table)) best.push_back(table.rows[i]);
    auto best_out = open_out(cfg.out + ".best_s.csv");
    gmmlab::write_csv(best, best_out);
    gmmlab::emit_summary(table, std::cout);
  }
  for (const auto& r : table.rows)
    if (!r.ok) std::cerr << "cell " << r.cell.index << " (" << gmmlab::method_name(r.cell) << "): " << r.status << '\n';
  return table.all_ok() ? 0 : kExitFailure;
}

int run_sample(const gmmlab::ExperimentConfig& cfg, const std::string& samples_path) {
  const auto plan = gmmlab::plan_sweep(cfg);
  if (plan.cells.size() != 1)
    throw gmmlab::ParameterError("config", "sample runs one cell; got " + std::to_string(plan.cells.size()));
  const gmmlab::ExperimentContext context(cfg);
  gmmlab::SamplerRun run;
  const gmmlab::CellResult r = gmmlab::run_cell(context, plan.cells.front(), &run);
  if (cfg.out.empty()) {
    gmmlab::write_csv({r}, std::cout);
  } else {
    auto out = open_out(cfg.out);
    gmmlab::write_csv({r}, out);
  }
  if (!r.ok) {
    std::cerr << r.status << '\n';
    return kExitFailure;
  }
  if (!samples_path.empty()) {
    auto out = open_out(samples_path);
    gmmlab::write_samples_csv(run, context.schedule(), out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gmm-ddim-lab: DDPM, DDIM and mixture-kernel DDIM samplers on synthetic data"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* sample = app.add_subcommand("sample", "run one configuration and report its metrics");
  add_common(sample, flags);
  std::string samples_path;
  sample->add_option("--samples", samples_path, "also write the final samples (and trajectory) to this CSV");

  auto* sweep = app.add_subcommand("sweep", "run the cross product of all list-valued keys");
  add_common(sweep, flags);

  auto* ablate = app.add_subcommand(
      "ablate", "K/s grid for the mixture sampler (defaults: gmm_ortho_vub, K in {2,4,8}, s in {0.01,0.1,1,10}, data.dim 10)");
  add_common(ablate, flags);

  auto* verify = app.add_subcommand("verify", "run the oracle suites and report pass/fail rows");
  add_common(verify, flags);
  gmmlab::VerifyOptions vopt;
  std::string scheme_name = "gmm_ortho";
  verify->add_option("--oracle", vopt.oracle, "all|moments|constraints|elbo|reduction|score|posterior")
      ->capture_default_str();
  verify->add_option("--K", vopt.components, "mixture components")->capture_default_str();
  verify->add_option("--S", vopt.steps, "sampling steps")->capture_default_str();
  verify->add_option("--D", vopt.dim, "dimension")->capture_default_str();
  verify->add_option("--scheme", scheme_name, "gmm_rand|gmm_ortho|gmm_ortho_vub")->capture_default_str();
  verify->add_option("--scale", vopt.scale, "offset scale s")->capture_default_str();
  verify->add_option("--eta", vopt.eta, "stochasticity")->capture_default_str();
  verify->add_option("--chains", vopt.chains, "Monte Carlo chains")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) {
      const auto map = build_map(flags);
      const auto cfg = gmmlab::make_config(map);
      vopt.schedule = cfg.schedule;
      vopt.seed = cfg.seed;
      vopt.scheme = gmmlab::parse_kernel_scheme(scheme_name);
      const auto rows = gmmlab::run_verification(vopt);
      if (cfg.out.empty()) {
        gmmlab::write_verify_csv(rows, std::cout);
      } else {
        auto out = open_out(cfg.out);
        gmmlab::write_verify_csv(rows, out);
      }
      int failed = 0;
      for (const auto& r : rows) failed += r.status == "fail";
      std::cerr << "verify: " << rows.size() << " rows, " << failed << " failed\n";
      return failed == 0 ? 0 : kExitFailure;
    }
    if (*ablate) {
      const auto cfg = gmmlab::make_config(build_map(flags, {{"sampler.kind", "ddim_gmm"},
                                                             {"kernel.scheme", "gmm_ortho_vub"},
                                                             {"kernel.components", "2, 4, 8"},
                                                             {"kernel.scale", "0.01, 0.1, 1, 10"},
                                                             {"data.dim", "10"}}));
      return run_table(cfg);
    }
    const auto cfg = gmmlab::make_config(build_map(flags));
    if (*sweep) return run_table(cfg);
    return run_sample(cfg, samples_path);
  } catch (const gmmlab::ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
