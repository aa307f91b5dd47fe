// Executes a configured run end to end: simulate/load input, track, apply
// the ablation toggles, compute metrics and write artifacts.
#pragma once

#include "mbtrack/config.hpp"
#include "mbtrack/metrics.hpp"

#include <optional>
#include <string>

namespace mbtrack {

struct RunArtifacts {
  MetricsReport metrics;
  std::string trajectory_csv;  // paths of files written (empty if skipped)
  std::string report_json;
  std::string textured_ply;
  std::vector<FrameResult> results;
  std::optional<ScenarioData> scenario;  // retained in scenario mode
  double global_ba_initial_cost = 0.0;
  double global_ba_final_cost = 0.0;
  bool init_failed = false;
};

/// Runs the pipeline per the config, writes trajectory CSV + report JSON (+
/// textured PLY when texturing ran) under cfg.out_dir.
RunArtifacts run_tracking(const RunConfig& cfg);

/// Paired ablation: one run with the named toggle as configured, one with it
/// flipped; writes both reports plus a comparison JSON.
struct AblationArtifacts {
  RunArtifacts on;
  RunArtifacts off;
  std::string comparison_json;
};
AblationArtifacts run_ablation(const RunConfig& cfg, const std::string& toggle);

/// Serializes the metrics report (+ toggles and config hash) to JSON text.
std::string report_to_json(const RunConfig& cfg, const RunArtifacts& artifacts);

}  // namespace mbtrack
