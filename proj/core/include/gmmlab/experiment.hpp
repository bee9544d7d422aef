#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "gmmlab/config.hpp"
#include "gmmlab/denoiser.hpp"
#include "gmmlab/metrics.hpp"
#include "gmmlab/samplers.hpp"
#include "gmmlab/schedule.hpp"
#include "gmmlab/synthetic_data.hpp"

namespace gmmlab {

inline constexpr const char* kCsvHeaderLine = "# gmm-ddim-lab v1";

/// One point of the sweep cross product after canonicalization.
struct SweepCell {
  std::size_t index = 0;
  SamplerKind kind = SamplerKind::ddim;
  int steps = 10;
  double eta = 0.0;
  KernelChoice kernel;
  int components = 1;
  double scale = 0.0;
  bool share = false;
  GuidanceConfig guidance;
};

/// "ddpm", "ddim", or "ddim_" + kernel scheme name (e.g. "ddim_gmm_ortho_vub").
std::string method_name(const SweepCell& cell);

struct SweepPlan {
  std::vector<SweepCell> cells;
  std::size_t cross_product = 0;
  /// Cells dropped because they canonicalize to an earlier cell: DDPM and
  /// DDIM ignore the kernel axes, DDPM also ignores steps and eta, and a
  /// guidance scale is meaningless without a guidance mode.
  std::size_t deduplicated = 0;
};

SweepPlan plan_sweep(const ExperimentConfig& config);

/// Shared read-only state of a sweep: data, schedule, analytic denoiser and
/// the exact reference draw used by the two-sample metrics.
///
/// Random streams derive from the master seed only, so every cell sees the
/// same starting noise, kernel draws and reference set (common random numbers
/// across cells).
class ExperimentContext {
 public:
  explicit ExperimentContext(const ExperimentConfig& config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const MixtureDistribution& data() const noexcept { return *data_; }
  const Schedule& schedule() const noexcept { return schedule_; }
  const ExactDenoiser& denoiser() const noexcept { return *denoiser_; }
  /// Reference draw from the data, or from the guided class when `label` is set.
  const Batch& reference(std::optional<int> label = std::nullopt) const;

  std::uint64_t chain_seed() const;
  RngStream kernel_stream() const;
  std::uint64_t projection_seed() const;

 private:
  ExperimentConfig config_;
  std::unique_ptr<MixtureDistribution> data_;
  Schedule schedule_;
  std::unique_ptr<ExactDenoiser> denoiser_;
  Batch reference_;
  mutable std::vector<std::pair<int, Batch>> class_reference_;
};

struct CellResult {
  SweepCell cell;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  long clip_events = 0;
  double wall_time_ms = 0.0;
  bool ok = true;
  std::string status = "ok";
};

/// Runs one cell. Errors are caught and recorded in the result. When `run` is
/// given it receives the sampler output.
CellResult run_cell(const ExperimentContext& context, const SweepCell& cell, SamplerRun* run = nullptr);

struct SweepTable {
  SweepPlan plan;
  std::vector<CellResult> rows;  // cell-index order
  bool all_ok() const;
};

SweepTable run_sweep(const ExperimentConfig& config);

/// Header line, column names, then one line per row.
void write_csv(const std::vector<CellResult>& rows, std::ostream& out, bool include_wall_time = true);

/// Best-s rows: among successful mixture-kernel rows that agree on every axis
/// except the scale, the lowest mmd2; exact ties go to the lower s.
std::vector<std::size_t> best_s_rows(const SweepTable& table);

/// Per (steps, eta) group, the row with the lowest mmd2 among successful rows;
/// ties go to the earlier row.
std::vector<std::size_t> summary_best_rows(const SweepTable& table);

/// Aligned text table grouped by (steps, eta) with a `*` marker on each
/// group's best mmd2.
void emit_summary(const SweepTable& table, std::ostream& out);

/// Final samples (and trajectory when recorded) as CSV: step, chain, x0..x{D-1}.
/// Step 0 rows are the finals; trajectory rows carry the tau entry reached.
void write_samples_csv(const SamplerRun& run, const Schedule& schedule, std::ostream& out);

struct VerifyOptions {
  std::string oracle = "all";  // all|moments|constraints|elbo|reduction|score|posterior
  int components = 2;
  int steps = 3;
  int dim = 3;
  KernelScheme scheme = KernelScheme::ortho;
  double scale = 0.01;
  double eta = 1.0;
  std::size_t chains = 20000;
  std::uint64_t seed = 0;
  ScheduleSpec schedule;
};

struct VerifyRow {
  std::string step;  // tau entry, bank index or "-"
  std::string quantity;
  double value = 0.0;
  double tolerance = 0.0;
  std::string status;  // pass, fail or skip
};

std::vector<VerifyRow> run_verification(const VerifyOptions& options);
void write_verify_csv(const std::vector<VerifyRow>& rows, std::ostream& out);

}  // namespace gmmlab
