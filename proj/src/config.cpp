#include "mbtrack/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mbtrack {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
  throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + what);
}

ConfigFile::Value parse_scalar(const std::string& token, const std::string& origin, int line) {
  if (token == "true") return true;
  if (token == "false") return false;
  if (token.size() >= 2 && token.front() == '"' && token.back() == '"') {
    return token.substr(1, token.size() - 2);
  }
  try {
    size_t used = 0;
    const double v = std::stod(token, &used);
    if (used == token.size()) return v;
  } catch (const std::exception&) {
  }
  fail(origin, line, "cannot parse value '" + token + "'");
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, lineno, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(origin, lineno, "empty section name");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(origin, lineno, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) fail(origin, lineno, "empty key or value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (value.front() == '[') {
      if (value.back() != ']') fail(origin, lineno, "unterminated array");
      std::vector<double> arr;
      std::stringstream ss(value.substr(1, value.size() - 2));
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        const Value v = parse_scalar(tok, origin, lineno);
        if (!std::holds_alternative<double>(v)) fail(origin, lineno, "arrays hold numbers only");
        arr.push_back(std::get<double>(v));
      }
      cfg.values_[full] = std::move(arr);
    } else {
      cfg.values_[full] = parse_scalar(value, origin, lineno);
    }
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_string(buffer.str(), path);
}

double ConfigFile::number(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const double* v = std::get_if<double>(&it->second)) return *v;
  throw std::runtime_error("config key '" + key + "' is not a number");
}

int ConfigFile::integer(const std::string& key, int fallback) const {
  const double v = number(key, double(fallback));
  if (std::abs(v - std::round(v)) > 1e-9) {
    throw std::runtime_error("config key '" + key + "' is not an integer");
  }
  return int(std::lround(v));
}

bool ConfigFile::boolean(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const bool* v = std::get_if<bool>(&it->second)) return *v;
  throw std::runtime_error("config key '" + key + "' is not a boolean");
}

std::string ConfigFile::text(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const std::string* v = std::get_if<std::string>(&it->second)) return *v;
  throw std::runtime_error("config key '" + key + "' is not a string");
}

std::vector<double> ConfigFile::array(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return {};
  if (const auto* v = std::get_if<std::vector<double>>(&it->second)) return *v;
  throw std::runtime_error("config key '" + key + "' is not an array");
}

std::string ConfigFile::canonical() const {
  std::ostringstream out;
  out.precision(17);
  for (const auto& [key, value] : values_) {
    out << key << "=";
    if (const bool* b = std::get_if<bool>(&value)) {
      out << (*b ? "true" : "false");
    } else if (const double* d = std::get_if<double>(&value)) {
      out << *d;
    } else if (const std::string* s = std::get_if<std::string>(&value)) {
      out << '"' << *s << '"';
    } else {
      out << "[";
      const auto& arr = std::get<std::vector<double>>(value);
      for (size_t i = 0; i < arr.size(); ++i) out << (i ? "," : "") << arr[i];
      out << "]";
    }
    out << "\n";
  }
  return out.str();
}

uint64_t fnv1a_hash(const std::string& text) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

RunConfig make_run_config(const ConfigFile& file) {
  static const std::set<std::string> known = {
      "input.mode", "input.scenario", "input.observations", "input.image_dir", "input.mesh",
      "input.t_init", "input.correspondences", "input.render_images",
      "toggles.prior_init", "toggles.pseudo_mask", "toggles.shape_prior_ba",
      "optimizer.w_shape", "optimizer.max_iterations", "optimizer.huber_px",
      "optimizer.huber_shape", "optimizer.tolerance",
      "pipeline.corner_budget", "pipeline.fast_threshold", "pipeline.dilation_px",
      "pipeline.min_inliers", "pipeline.kf_inlier_ratio", "pipeline.kf_max_interval",
      "pipeline.local_ba_window", "pipeline.covis_min_shared", "pipeline.texture_keyframes",
      "pipeline.global_ba_at_end", "pipeline.min_init_depth_points",
      "pipeline.triangulation_reproj_px", "pipeline.min_parallax_deg",
      "pipeline.reloc_min_matches", "pipeline.reloc_min_inliers", "pipeline.reloc_px_gate",
      "pipeline.surface_density",
      "scenario.frames", "scenario.fps", "scenario.pixel_sigma", "scenario.dropout",
      "scenario.outlier", "scenario.organ_features", "scenario.background_features",
      "scenario.subdivisions", "scenario.organ", "scenario.organ_radius", "scenario.mesh",
      "scenario.fx", "scenario.fy", "scenario.cx", "scenario.cy", "scenario.width",
      "scenario.height",
      "run.seed", "run.deterministic", "run.out",
  };
  for (const auto& [key, value] : file.values()) {
    if (!known.count(key)) throw std::runtime_error("unknown config key '" + key + "'");
  }

  RunConfig cfg;
  const std::string mode = file.text("input.mode", "scenario");
  if (mode == "scenario") {
    cfg.mode = InputMode::scenario;
  } else if (mode == "observations") {
    cfg.mode = InputMode::observations;
  } else if (mode == "images") {
    cfg.mode = InputMode::images;
  } else {
    throw std::runtime_error("input.mode must be scenario|observations|images");
  }
  cfg.scenario_name = file.text("input.scenario", "default");
  cfg.observations_path = file.text("input.observations", "");
  cfg.image_dir = file.text("input.image_dir", "");
  cfg.mesh_path = file.text("input.mesh", "");
  cfg.t_init_path = file.text("input.t_init", "");
  cfg.correspondences_path = file.text("input.correspondences", "");
  cfg.render_images = file.boolean("input.render_images", false);

  cfg.seed = uint64_t(file.integer("run.seed", 1));
  cfg.out_dir = file.text("run.out", "out");

  // Fallbacks come from the struct defaults so the two never diverge.
  PipelineConfig& p = cfg.pipeline;
  p.enable_prior_init = file.boolean("toggles.prior_init", p.enable_prior_init);
  p.enable_mask = file.boolean("toggles.pseudo_mask", p.enable_mask);
  p.enable_shape_prior = file.boolean("toggles.shape_prior_ba", p.enable_shape_prior);
  p.opt.w_shape = file.number("optimizer.w_shape", p.opt.w_shape);
  p.opt.max_iterations = file.integer("optimizer.max_iterations", p.opt.max_iterations);
  p.opt.reprojection_kernel =
      RobustKernel::huber(file.number("optimizer.huber_px", p.opt.reprojection_kernel.delta));
  const double huber_shape = file.number("optimizer.huber_shape", 0.0);
  p.opt.shape_kernel = RobustKernel::huber(huber_shape);  // 0 resolves to 2% bbox diag
  p.opt.tolerance = file.number("optimizer.tolerance", p.opt.tolerance);
  p.corner_budget = file.integer("pipeline.corner_budget", p.corner_budget);
  p.fast_threshold = file.integer("pipeline.fast_threshold", p.fast_threshold);
  p.dilation_px = file.integer("pipeline.dilation_px", p.dilation_px);
  p.min_inliers = file.integer("pipeline.min_inliers", p.min_inliers);
  p.kf_inlier_ratio = file.number("pipeline.kf_inlier_ratio", p.kf_inlier_ratio);
  p.kf_max_interval = file.integer("pipeline.kf_max_interval", p.kf_max_interval);
  p.local_ba_window = file.integer("pipeline.local_ba_window", p.local_ba_window);
  p.covis_min_shared = file.integer("pipeline.covis_min_shared", p.covis_min_shared);
  p.texture_keyframes = file.boolean("pipeline.texture_keyframes", p.texture_keyframes);
  p.global_ba_at_end = file.boolean("pipeline.global_ba_at_end", p.global_ba_at_end);
  p.min_init_depth_points =
      file.integer("pipeline.min_init_depth_points", p.min_init_depth_points);
  p.triangulation_reproj_px =
      file.number("pipeline.triangulation_reproj_px", p.triangulation_reproj_px);
  p.min_parallax_deg = file.number("pipeline.min_parallax_deg", p.min_parallax_deg);
  p.reloc_min_matches = file.integer("pipeline.reloc_min_matches", p.reloc_min_matches);
  p.reloc_min_inliers = file.integer("pipeline.reloc_min_inliers", p.reloc_min_inliers);
  p.reloc_px_gate = file.number("pipeline.reloc_px_gate", p.reloc_px_gate);
  p.surface_density = file.number("pipeline.surface_density", p.surface_density);
  p.seed = cfg.seed;

  if (cfg.mode == InputMode::scenario) {
    cfg.scenario = scenario_by_name(cfg.scenario_name, cfg.seed);
    ScenarioSpec& s = cfg.scenario;
    s.frames = file.integer("scenario.frames", s.frames);
    s.fps = file.number("scenario.fps", s.fps);
    s.noise.pixel_sigma = file.number("scenario.pixel_sigma", s.noise.pixel_sigma);
    s.noise.dropout = file.number("scenario.dropout", s.noise.dropout);
    s.noise.outlier = file.number("scenario.outlier", s.noise.outlier);
    s.organ_features = file.integer("scenario.organ_features", s.organ_features);
    s.background_features = file.integer("scenario.background_features", s.background_features);
    s.subdivisions = file.integer("scenario.subdivisions", s.subdivisions);
    s.organ_radius = file.number("scenario.organ_radius", s.organ_radius);
    const std::string organ = file.text("scenario.organ", "");
    if (organ == "icosphere") {
      s.organ = ScenarioSpec::Organ::icosphere;
    } else if (organ == "ellipsoid") {
      s.organ = ScenarioSpec::Organ::ellipsoid;
    } else if (organ == "bumpy_ellipsoid") {
      s.organ = ScenarioSpec::Organ::bumpy_ellipsoid;
    } else if (organ == "file") {
      s.organ = ScenarioSpec::Organ::file;
      s.mesh_path = file.text("scenario.mesh", "");
    } else if (!organ.empty()) {
      throw std::runtime_error("scenario.organ must be icosphere|ellipsoid|bumpy_ellipsoid|file");
    }
    s.k.fx = file.number("scenario.fx", s.k.fx);
    s.k.fy = file.number("scenario.fy", s.k.fy);
    s.k.cx = file.number("scenario.cx", s.k.cx);
    s.k.cy = file.number("scenario.cy", s.k.cy);
    s.k.width = file.integer("scenario.width", s.k.width);
    s.k.height = file.integer("scenario.height", s.k.height);
    s.seed = cfg.seed;
  }

  cfg.pipeline.deterministic = file.boolean("run.deterministic", true);
  cfg.config_text = file.canonical();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return make_run_config(ConfigFile::parse_file(path));
}

}  // namespace mbtrack
