// Run configuration: a small TOML-subset reader (sections, scalar keys,
// flat arrays) and the RunConfig consumed by the evaluation harness.
#pragma once

#include "mbtrack/pipeline.hpp"
#include "mbtrack/simulator.hpp"

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mbtrack {

class ConfigFile {
 public:
  using Value = std::variant<bool, double, std::string, std::vector<double>>;

  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  double number(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string text(const std::string& key, const std::string& fallback) const;
  std::vector<double> array(const std::string& key) const;

  // Canonical serialization used for the report's config hash.
  std::string canonical() const;
  const std::map<std::string, Value>& values() const { return values_; }

 private:
  std::map<std::string, Value> values_;  // "section.key" -> value
};

uint64_t fnv1a_hash(const std::string& text);

enum class InputMode { scenario, observations, images };

struct RunConfig {
  InputMode mode = InputMode::scenario;
  std::string scenario_name = "default";
  ScenarioSpec scenario;          // resolved preset + overrides
  std::string observations_path;  // observation-log mode
  std::string image_dir;          // image-sequence mode
  std::string mesh_path;          // required outside scenario mode
  std::string t_init_path;        // 12-number row-major file
  std::string correspondences_path;  // CSV alternative for T_init
  bool render_images = false;        // attach synthetic frames for texturing

  PipelineConfig pipeline;  // includes the three ablation toggles
  uint64_t seed = 1;
  std::string out_dir = "out";
  std::string config_text;  // canonical form, hashed into the report
};

/// Builds a RunConfig from a parsed file; unknown keys are rejected.
RunConfig make_run_config(const ConfigFile& file);
RunConfig load_run_config(const std::string& path);

}  // namespace mbtrack
