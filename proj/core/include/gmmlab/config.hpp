#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmmlab/denoiser.hpp"
#include "gmmlab/metrics.hpp"
#include "gmmlab/samplers.hpp"

namespace gmmlab {

/// Raw `key = value` entries. Later assignments replace earlier ones.
///
/// File syntax: one assignment per line, `#` starts a comment, blank lines are
/// skipped. Sweep axes take comma-separated lists (`sampler.steps = 10, 20`);
/// `kernel.priors` is a single comma-separated vector.
class ConfigMap {
 public:
  static ConfigMap parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigMap load(const std::string& path);

  /// Applies one `key=value` override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct DataSpec {
  std::string name = "ring8";  // built-in name, ignored when `table` is set
  int dim = 2;
  std::string table;           // path to a component table
};

struct ScheduleSpec {
  int total_steps = 1000;
  double beta_start = 0.0015;
  double beta_end = 0.0195;
};

/// "gaussian" denotes the plain kernel; otherwise a mixture scheme.
struct KernelChoice {
  bool gaussian = true;
  KernelScheme scheme = KernelScheme::ortho_vub;
};

std::string to_string(const KernelChoice& choice);
KernelChoice parse_kernel_choice(const std::string& name);

/// Everything a run needs. Every list is a sweep axis; `sample` requires each
/// to hold exactly one value.
struct ExperimentConfig {
  DataSpec data;
  ScheduleSpec schedule;

  std::vector<SamplerKind> kinds{SamplerKind::ddim};
  std::vector<int> steps{10};
  std::vector<double> etas{0.0};
  std::vector<KernelChoice> schemes{KernelChoice{}};
  std::vector<int> components{8};
  std::vector<double> scales{1.0};
  std::vector<bool> shares{false};
  std::vector<GuidanceConfig::Mode> guidance_modes{GuidanceConfig::Mode::none};
  std::vector<double> guidance_scales{0.0};
  int guidance_label = 0;
  std::optional<std::vector<double>> priors;

  std::size_t chains = 2000;
  std::uint64_t seed = 0;
  bool record_trajectory = false;
  unsigned threads = 1;

  MetricsOptions metrics;
  std::size_t eval_samples = 2000;

  std::string out;
};

/// Builds a config from defaults plus `map`. Throws ParameterError naming the
/// key for unknown keys, unparsable values and out-of-range values.
ExperimentConfig make_config(const ConfigMap& map);

/// Accepted keys, for help output.
const std::vector<std::string>& known_config_keys();

}  // namespace gmmlab
