#pragma once

#include <cstddef>
#include <vector>

namespace gmmlab {

/// Discretized forward noise process plus the reverse-time step subsequence.
///
/// Steps are 1-based: `alpha(t)` for t in [1, T] is the cumulative product
/// prod_{i<=t} (1 - beta_i), and `alpha(0)` is exactly 1. The subsequence
/// `tau()` is strictly increasing with entries in [1, T]; reverse samplers walk
/// it back to front and finish on the virtual step 0.
class Schedule {
 public:
  /// Betas linearly interpolated between both endpoints, inclusive.
  static Schedule linear(int total_steps, double beta_start, double beta_end);

  /// Builds a schedule directly from betas; tau defaults to the full range.
  static Schedule from_betas(std::vector<double> betas);

  int total_steps() const noexcept { return static_cast<int>(betas_.size()); }
  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas_cum() const noexcept { return alphas_cum_; }
  const std::vector<int>& tau() const noexcept { return tau_; }
  int num_substeps() const noexcept { return static_cast<int>(tau_.size()); }

  double beta(int t) const;
  double alpha(int t) const;

  /// Reverse step j in [1, S] goes from tau[j-1] to tau[j-2] (step 0 when j == 1).
  int step_from(int j) const;
  int step_to(int j) const;

  /// Copy with an explicit subsequence. Throws ParameterError unless strictly
  /// increasing within [1, T].
  Schedule with_tau(std::vector<int> tau) const;

  bool is_full_range() const noexcept;

 private:
  Schedule() = default;

  std::vector<double> betas_;
  std::vector<double> alphas_cum_;
  std::vector<int> tau_;
};

/// Even stride anchored at step 1: tau_i = floor(1 + i*T/count), deduplicated.
Schedule select_substeps(const Schedule& schedule, int count);

/// Reverse-kernel standard deviation for reverse step j (see Schedule::step_from):
/// eta * sqrt((1 - a_prev)/(1 - a_cur)) * sqrt(1 - a_cur/a_prev).
double sigma_for_step(const Schedule& schedule, int j, double eta);

}  // namespace gmmlab
