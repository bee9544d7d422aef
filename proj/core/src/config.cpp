#include "gmmlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <ios>
#include <sstream>

#include "gmmlab/errors.hpp"

namespace gmmlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& key, const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ParameterError(key, "empty list entry");
    out.push_back(item);
  }
  if (out.empty()) throw ParameterError(key, "empty value");
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParameterError(key, "cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ParameterError(key, "expected a boolean, got '" + text + "'");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& value, F&& one) {
  std::vector<T> out;
  for (const auto& item : split_list(key, value)) out.push_back(one(item));
  return out;
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text, const std::string& origin) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParameterError(origin + ":" + std::to_string(lineno), "expected 'key = value'");
    map.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return map;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void ConfigMap::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ParameterError(assignment, "override must look like key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw ParameterError("<key>", "empty key");
  values_[key] = value;
}

std::string to_string(const KernelChoice& choice) {
  return choice.gaussian ? "gaussian" : to_string(choice.scheme);
}

KernelChoice parse_kernel_choice(const std::string& name) {
  if (name == "gaussian") return KernelChoice{true, KernelScheme::ortho_vub};
  const KernelScheme s = parse_kernel_scheme(name);
  if (s == KernelScheme::explicit_offsets) throw ParameterError("kernel.scheme", "unknown scheme '" + name + "'");
  return KernelChoice{false, s};
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys{
      "data.name",          "data.dim",           "data.table",
      "schedule.total_steps", "schedule.beta_start", "schedule.beta_end",
      "sampler.kind",       "sampler.eta",        "sampler.steps",
      "sampler.chains",     "sampler.seed",       "sampler.record_trajectory",
      "sampler.threads",    "kernel.scheme",      "kernel.components",
      "kernel.scale",       "kernel.share_across_steps", "kernel.priors",
      "guidance.mode",      "guidance.scale",     "guidance.label",
      "metrics.mmd_bandwidth", "metrics.swd_projections", "metrics.eval_samples",
      "output.path"};
  return keys;
}

ExperimentConfig make_config(const ConfigMap& map) {
  ExperimentConfig c;
  const auto& known = known_config_keys();
  for (const auto& [key, value] : map.values()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ParameterError(key, "unknown configuration key");
    if (value.empty()) throw ParameterError(key, "empty value");
  }
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = map.values().find(key);
    return it == map.values().end() ? nullptr : &it->second;
  };
  auto scalar = [&](const std::string& key) -> const std::string* {
    const std::string* v = get(key);
    if (v && v->find(',') != std::string::npos) throw ParameterError(key, "expects a single value");
    return v;
  };

  if (auto v = scalar("data.name")) c.data.name = *v;
  if (auto v = scalar("data.dim")) c.data.dim = parse_number<int>("data.dim", *v);
  if (auto v = scalar("data.table")) c.data.table = *v;
  if (c.data.dim < 2) throw ParameterError("data.dim", "must be >= 2");

  if (auto v = scalar("schedule.total_steps")) c.schedule.total_steps = parse_number<int>("schedule.total_steps", *v);
  if (auto v = scalar("schedule.beta_start")) c.schedule.beta_start = parse_number<double>("schedule.beta_start", *v);
  if (auto v = scalar("schedule.beta_end")) c.schedule.beta_end = parse_number<double>("schedule.beta_end", *v);

  if (auto v = get("sampler.kind"))
    c.kinds = parse_list<SamplerKind>("sampler.kind", *v, [](const std::string& s) { return parse_sampler_kind(s); });
  if (auto v = get("sampler.steps"))
    c.steps = parse_list<int>("sampler.steps", *v, [](const std::string& s) { return parse_number<int>("sampler.steps", s); });
  if (auto v = get("sampler.eta"))
    c.etas = parse_list<double>("sampler.eta", *v, [](const std::string& s) { return parse_number<double>("sampler.eta", s); });
  if (auto v = scalar("sampler.chains")) c.chains = parse_number<std::size_t>("sampler.chains", *v);
  if (auto v = scalar("sampler.seed")) c.seed = parse_number<std::uint64_t>("sampler.seed", *v);
  if (auto v = scalar("sampler.record_trajectory")) c.record_trajectory = parse_bool("sampler.record_trajectory", *v);
  if (auto v = scalar("sampler.threads")) c.threads = parse_number<unsigned>("sampler.threads", *v);

  if (auto v = get("kernel.scheme"))
    c.schemes = parse_list<KernelChoice>("kernel.scheme", *v, [](const std::string& s) { return parse_kernel_choice(s); });
  if (auto v = get("kernel.components"))
    c.components = parse_list<int>("kernel.components", *v,
                                   [](const std::string& s) { return parse_number<int>("kernel.components", s); });
  if (auto v = get("kernel.scale"))
    c.scales = parse_list<double>("kernel.scale", *v, [](const std::string& s) { return parse_number<double>("kernel.scale", s); });
  if (auto v = get("kernel.share_across_steps"))
    c.shares = parse_list<bool>("kernel.share_across_steps", *v,
                                [](const std::string& s) { return parse_bool("kernel.share_across_steps", s); });
  if (auto v = get("kernel.priors"))
    c.priors = parse_list<double>("kernel.priors", *v, [](const std::string& s) { return parse_number<double>("kernel.priors", s); });

  if (auto v = get("guidance.mode"))
    c.guidance_modes = parse_list<GuidanceConfig::Mode>("guidance.mode", *v,
                                                        [](const std::string& s) { return parse_guidance_mode(s); });
  if (auto v = get("guidance.scale"))
    c.guidance_scales = parse_list<double>("guidance.scale", *v,
                                           [](const std::string& s) { return parse_number<double>("guidance.scale", s); });
  if (auto v = scalar("guidance.label")) c.guidance_label = parse_number<int>("guidance.label", *v);

  if (auto v = scalar("metrics.mmd_bandwidth")) {
    if (*v != "median") c.metrics.mmd_bandwidth = parse_number<double>("metrics.mmd_bandwidth", *v);
  }
  if (auto v = scalar("metrics.swd_projections"))
    c.metrics.swd_projections = parse_number<int>("metrics.swd_projections", *v);
  if (auto v = scalar("metrics.eval_samples")) c.eval_samples = parse_number<std::size_t>("metrics.eval_samples", *v);
  if (auto v = scalar("output.path")) c.out = *v;

  for (int s : c.steps)
    if (s < 1) throw ParameterError("sampler.steps", "must be >= 1");
  for (double e : c.etas)
    if (!(e >= 0.0 && e <= 1.0)) throw ParameterError("sampler.eta", "must lie in [0, 1]");
  for (int k : c.components)
    if (k < 1) throw ParameterError("kernel.components", "must be >= 1");
  for (double s : c.scales)
    if (!(s >= 0.0)) throw ParameterError("kernel.scale", "must be >= 0");
  for (double w : c.guidance_scales)
    if (!(w >= 0.0)) throw ParameterError("guidance.scale", "must be >= 0");
  if (c.metrics.mmd_bandwidth && !(*c.metrics.mmd_bandwidth > 0.0))
    throw ParameterError("metrics.mmd_bandwidth", "must be > 0 or 'median'");
  if (c.metrics.swd_projections < 1) throw ParameterError("metrics.swd_projections", "must be >= 1");
  if (c.eval_samples < 2) throw ParameterError("metrics.eval_samples", "must be >= 2");
  if (c.chains < 2) throw ParameterError("sampler.chains", "must be >= 2 for the metrics");
  if (c.threads < 1) throw ParameterError("sampler.threads", "must be >= 1");
  return c;
}

}  // namespace gmmlab
