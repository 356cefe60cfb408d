#pragma once

// Run configuration and its flat `key = value` text form.

#include "harmonpaint/makvs.hpp"
#include "harmonpaint/steer.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace harmonpaint {

/// Validation failure for one configuration field.
class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::string field, const std::string& message)
      : InvalidArgument(field + ": " + message), field_(std::move(field)), detail_(message) {}

  [[nodiscard]] const std::string& field() const { return field_; }
  [[nodiscard]] const std::string& detail() const { return detail_; }

 private:
  std::string field_;
  std::string detail_;
};

/// Layer indices, either explicit or "the last n blocks" resolved against a
/// backend's block count. Text form: "2-6", "1,3,9-10", "last:8", "none".
struct LayerSelection {
  std::vector<int> explicit_layers;
  int last = 0;

  static LayerSelection indices(std::vector<int> layers) { return {std::move(layers), 0}; }
  static LayerSelection last_n(int n) { return {{}, n}; }
  static LayerSelection none() { return {}; }

  [[nodiscard]] std::vector<int> resolve(int block_count) const {
    if (last > 0) {
      require(last <= block_count, "cannot select the last " + std::to_string(last) + " of " +
                                       std::to_string(block_count) + " blocks");
      std::vector<int> out;
      for (int i = block_count - last + 1; i <= block_count; ++i) out.push_back(i);
      return out;
    }
    for (int layer : explicit_layers)
      require(layer >= 1 && layer <= block_count,
              "layer " + std::to_string(layer) + " outside 1.." + std::to_string(block_count));
    return explicit_layers;
  }

  bool operator==(const LayerSelection&) const = default;
};

enum class BackendKind { toy, external };

struct RunConfig {
  double tau = 0.1;
  double lambda = StyleStrength::kStylized;
  double eta = 0.6;
  int steps = 50;
  double guidance_scale = 7.5;  // consumed only by external backends
  LayerSelection sams_layers = LayerSelection::indices({2, 3, 4, 5, 6});
  LayerSelection makvs_layers = LayerSelection::last_n(8);
  bool sams_renormalize = false;
  SteerConfig steer;
  bool steer_enabled = true;
  int steer_stride = 1;
  std::uint64_t seed = 0;
  BackendKind backend = BackendKind::toy;
  int latent_size = 32;  // toy backend latent grid (square)
  std::string dump_dir;  // empty disables dumps
  int dump_stride = 5;

  bool operator==(const RunConfig&) const = default;
};

/// Inputs of a CLI run: the configuration plus file paths and prompt.
struct RunRequest {
  std::string image;
  std::string mask;
  std::string prompt;
  std::string output = "harmonpaint_out";
  RunConfig config;

  bool operator==(const RunRequest&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(field, "expected a number, got '" + text + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  Int v{};
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(field, "expected an integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(field, "expected true or false, got '" + text + "'");
}

inline std::vector<int> parse_int_list(const std::string& field, const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(parse_int<int>(field, item));
    } else {
      const int a = parse_int<int>(field, item.substr(0, dash));
      const int b = parse_int<int>(field, item.substr(dash + 1));
      if (b < a) throw ConfigError(field, "descending range '" + item + "'");
      for (int i = a; i <= b; ++i) out.push_back(i);
    }
  }
  return out;
}

inline std::string format_int_list(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

}  // namespace detail

inline LayerSelection parse_layer_selection(const std::string& field, const std::string& text) {
  const std::string t = detail::trim(text);
  if (t.empty() || t == "none") return LayerSelection::indices({});
  if (t.rfind("last:", 0) == 0) {
    const int n = detail::parse_int<int>(field, t.substr(5));
    if (n < 1) throw ConfigError(field, "last:N needs N >= 1");
    return LayerSelection::last_n(n);
  }
  std::vector<int> layers = detail::parse_int_list(field, t);
  std::set<int> unique(layers.begin(), layers.end());
  if (unique.size() != layers.size()) throw ConfigError(field, "duplicate layer index");
  for (int l : layers)
    if (l < 1) throw ConfigError(field, "layer indices are 1-based");
  return LayerSelection::indices(std::vector<int>(unique.begin(), unique.end()));
}

inline std::string format_layer_selection(const LayerSelection& s) {
  if (s.last > 0) return "last:" + std::to_string(s.last);
  if (s.explicit_layers.empty()) return "none";
  return detail::format_int_list(s.explicit_layers);
}

inline void validate(const RunConfig& c) {
  if (!(c.tau >= 0.0 && c.tau < 1.0)) throw ConfigError("tau", "must lie in [0, 1)");
  if (!(std::isfinite(c.lambda) && c.lambda >= 0.0)) throw ConfigError("lambda", "must be >= 0");
  if (!(c.eta > 0.0 && c.eta < 1.0)) throw ConfigError("eta", "must lie in the open interval (0, 1)");
  if (c.steps < 2 || c.steps >= static_cast<int>(kDefaultHorizon))
    throw ConfigError("steps", "must lie in [2, " + std::to_string(static_cast<int>(kDefaultHorizon) - 1) + "]");
  if (!(std::isfinite(c.guidance_scale) && c.guidance_scale >= 0.0))
    throw ConfigError("guidance_scale", "must be >= 0");
  if (!(std::isfinite(c.steer.step_size) && c.steer.step_size > 0.0))
    throw ConfigError("steer_step_size", "must be > 0");
  if (c.steer.iterations < 1) throw ConfigError("steer_iters", "must be >= 1");
  if (!(c.steer.epsilon > 0.0 && c.steer.epsilon <= 1e-2)) throw ConfigError("steer_epsilon", "must lie in (0, 1e-2]");
  if (c.steer.resolutions.empty()) throw ConfigError("steer_resolutions", "must list at least one resolution");
  for (int t : c.steer.tokens)
    if (t < 0) throw ConfigError("steer_tokens", "token indices must be >= 0");
  if (c.steer_stride < 1) throw ConfigError("steer_stride", "must be >= 1");
  if (c.latent_size < 4 || c.latent_size % 4 != 0 || c.latent_size > 128)
    throw ConfigError("latent_size", "must be a multiple of 4 in [4, 128]");
  if (c.dump_stride < 1) throw ConfigError("dump_stride", "must be >= 1");
}

/// Every configuration key in canonical order.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "image",          "mask",          "prompt",          "output",           "tau",
      "lambda",         "eta",           "steps",           "guidance_scale",   "sams_layers",
      "makvs_layers",   "sams_renormalize", "steer_enabled", "steer_iters",     "steer_step_size",
      "steer_epsilon",  "steer_tokens",  "steer_resolutions", "steer_stride",   "seed",
      "backend",        "latent_size",   "dump_dir",        "dump_stride"};
  return keys;
}

/// Sets one field from its text form; throws ConfigError on bad values and
/// on unknown keys.
inline void apply_setting(RunRequest& r, const std::string& key, const std::string& raw) {
  const std::string value = detail::trim(raw);
  RunConfig& c = r.config;
  using namespace detail;
  if (key == "image") r.image = value;
  else if (key == "mask") r.mask = value;
  else if (key == "prompt") r.prompt = value;
  else if (key == "output") r.output = value;
  else if (key == "tau") c.tau = parse_double(key, value);
  else if (key == "lambda") c.lambda = parse_double(key, value);
  else if (key == "eta") c.eta = parse_double(key, value);
  else if (key == "steps") c.steps = parse_int<int>(key, value);
  else if (key == "guidance_scale") c.guidance_scale = parse_double(key, value);
  else if (key == "sams_layers") c.sams_layers = parse_layer_selection(key, value);
  else if (key == "makvs_layers") c.makvs_layers = parse_layer_selection(key, value);
  else if (key == "sams_renormalize") c.sams_renormalize = parse_bool(key, value);
  else if (key == "steer_enabled") c.steer_enabled = parse_bool(key, value);
  else if (key == "steer_iters") c.steer.iterations = parse_int<int>(key, value);
  else if (key == "steer_step_size") c.steer.step_size = parse_double(key, value);
  else if (key == "steer_epsilon") c.steer.epsilon = parse_double(key, value);
  else if (key == "steer_tokens") c.steer.tokens = (value == "all" || value.empty()) ? std::vector<int>{} : parse_int_list(key, value);
  else if (key == "steer_resolutions") c.steer.resolutions = parse_int_list(key, value);
  else if (key == "steer_stride") c.steer_stride = parse_int<int>(key, value);
  else if (key == "seed") c.seed = parse_int<std::uint64_t>(key, value);
  else if (key == "backend") {
    if (value == "toy") c.backend = BackendKind::toy;
    else if (value == "external") c.backend = BackendKind::external;
    else throw ConfigError(key, "expected toy or external, got '" + value + "'");
  }
  else if (key == "latent_size") c.latent_size = parse_int<int>(key, value);
  else if (key == "dump_dir") c.dump_dir = value;
  else if (key == "dump_stride") c.dump_stride = parse_int<int>(key, value);
  else throw ConfigError(key, "unknown configuration key");
}

/// Keys under these prefixes are run records written into manifests; the
/// config reader skips them so a manifest can be fed back as a config file.
inline bool is_record_key(const std::string& key) {
  for (const char* prefix : {"record.", "step.", "schedule.", "dump.", "result.", "manifest."})
    if (key.rfind(prefix, 0) == 0) return true;
  return false;
}

/// Parses `key = value` lines ('#' starts a comment line).
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in,
                                                                        const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(source + ":" + std::to_string(number) + ": expected 'key = value'");
    out.emplace_back(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return out;
}

inline void apply_config_text(RunRequest& r, std::istream& in, const std::string& source) {
  for (const auto& [key, value] : parse_key_values(in, source))
    if (!is_record_key(key)) apply_setting(r, key, value);
}

inline void apply_config_file(RunRequest& r, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file '" + path.string() + "'");
  apply_config_text(r, in, path.string());
}

/// Canonical text form; doubles use shortest round-trip formatting.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunRequest& r) {
  const RunConfig& c = r.config;
  using detail::format_double;
  return {
      {"image", r.image},
      {"mask", r.mask},
      {"prompt", r.prompt},
      {"output", r.output},
      {"tau", format_double(c.tau)},
      {"lambda", format_double(c.lambda)},
      {"eta", format_double(c.eta)},
      {"steps", std::to_string(c.steps)},
      {"guidance_scale", format_double(c.guidance_scale)},
      {"sams_layers", format_layer_selection(c.sams_layers)},
      {"makvs_layers", format_layer_selection(c.makvs_layers)},
      {"sams_renormalize", c.sams_renormalize ? "true" : "false"},
      {"steer_enabled", c.steer_enabled ? "true" : "false"},
      {"steer_iters", std::to_string(c.steer.iterations)},
      {"steer_step_size", format_double(c.steer.step_size)},
      {"steer_epsilon", format_double(c.steer.epsilon)},
      {"steer_tokens", c.steer.tokens.empty() ? "all" : detail::format_int_list(c.steer.tokens)},
      {"steer_resolutions", detail::format_int_list(c.steer.resolutions)},
      {"steer_stride", std::to_string(c.steer_stride)},
      {"seed", std::to_string(c.seed)},
      {"backend", c.backend == BackendKind::toy ? "toy" : "external"},
      {"latent_size", std::to_string(c.latent_size)},
      {"dump_dir", c.dump_dir},
      {"dump_stride", std::to_string(c.dump_stride)},
  };
}

}  // namespace harmonpaint
