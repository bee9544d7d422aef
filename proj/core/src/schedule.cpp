#include "gmmlab/schedule.hpp"

#include <cmath>
#include <string>

#include "gmmlab/errors.hpp"

namespace gmmlab {

Schedule Schedule::linear(int total_steps, double beta_start, double beta_end) {
  if (total_steps < 1) throw ParameterError("total_steps", "must be >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0)) throw ParameterError("beta_start", "must lie in (0, 1)");
  if (!(beta_end > 0.0 && beta_end < 1.0)) throw ParameterError("beta_end", "must lie in (0, 1)");
  if (beta_start > beta_end) throw ParameterError("beta_end", "must be >= beta_start");

  std::vector<double> betas(static_cast<std::size_t>(total_steps));
  for (int i = 0; i < total_steps; ++i) {
    const double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return from_betas(std::move(betas));
}

Schedule Schedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ParameterError("total_steps", "must be >= 1");
  Schedule s;
  s.alphas_cum_.reserve(betas.size());
  double acc = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0))
      throw ParameterError("betas", "beta_" + std::to_string(i + 1) + " must lie in (0, 1)");
    acc *= 1.0 - betas[i];
    s.alphas_cum_.push_back(acc);
  }
  s.betas_ = std::move(betas);
  s.tau_.resize(s.betas_.size());
  for (std::size_t i = 0; i < s.tau_.size(); ++i) s.tau_[i] = static_cast<int>(i) + 1;
  return s;
}

double Schedule::beta(int t) const {
  if (t < 1 || t > total_steps()) throw ParameterError("t", "step " + std::to_string(t) + " out of [1, T]");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double Schedule::alpha(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > total_steps()) throw ParameterError("t", "step " + std::to_string(t) + " out of [0, T]");
  return alphas_cum_[static_cast<std::size_t>(t - 1)];
}

int Schedule::step_from(int j) const {
  if (j < 1 || j > num_substeps()) throw ParameterError("step_index", "reverse step " + std::to_string(j) + " out of [1, S]");
  return tau_[static_cast<std::size_t>(j - 1)];
}

int Schedule::step_to(int j) const {
  if (j < 1 || j > num_substeps()) throw ParameterError("step_index", "reverse step " + std::to_string(j) + " out of [1, S]");
  return j == 1 ? 0 : tau_[static_cast<std::size_t>(j - 2)];
}

Schedule Schedule::with_tau(std::vector<int> tau) const {
  if (tau.empty()) throw ParameterError("tau", "must be nonempty");
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (tau[i] < 1 || tau[i] > total_steps()) throw ParameterError("tau", "entry out of [1, T]");
    if (i > 0 && tau[i] <= tau[i - 1]) throw ParameterError("tau", "must be strictly increasing");
  }
  Schedule s = *this;
  s.tau_ = std::move(tau);
  return s;
}

bool Schedule::is_full_range() const noexcept {
  if (tau_.size() != betas_.size()) return false;
  for (std::size_t i = 0; i < tau_.size(); ++i)
    if (tau_[i] != static_cast<int>(i) + 1) return false;
  return true;
}

Schedule select_substeps(const Schedule& schedule, int count) {
  const int total = schedule.total_steps();
  if (count < 1) throw ParameterError("steps", "must be >= 1");
  if (count > total) throw ParameterError("steps", "must not exceed total_steps");
  std::vector<int> tau;
  tau.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    // Integer arithmetic keeps floor(1 + i*T/count) exact.
    const int t = 1 + static_cast<int>((static_cast<long long>(i) * total) / count);
    if (tau.empty() || t > tau.back()) tau.push_back(t);
  }
  return schedule.with_tau(std::move(tau));
}

double sigma_for_step(const Schedule& schedule, int j, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta", "must lie in [0, 1]");
  const double a_cur = schedule.alpha(schedule.step_from(j));
  const double a_prev = schedule.alpha(schedule.step_to(j));
  if (a_cur >= a_prev)
    throw ScheduleOrderError("alpha_cum at step " + std::to_string(schedule.step_from(j)) +
                             " is not below its predecessor");
  if (eta == 0.0) return 0.0;
  return eta * std::sqrt((1.0 - a_prev) / (1.0 - a_cur)) * std::sqrt(1.0 - a_cur / a_prev);
}

}  // namespace gmmlab
