#include "mbtrack/runner.hpp"

#include "mbtrack/registration.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace mbtrack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string pose_csv_fields(const std::optional<Pose>& pose) {
  std::ostringstream out;
  out.precision(17);
  if (pose) {
    const auto m = pose->to_row_major();
    for (int i = 0; i < 12; ++i) out << "," << m[i];
  } else {
    for (int i = 0; i < 12; ++i) out << ",nan";
  }
  return out.str();
}

void write_trajectory_csv(const std::vector<FrameResult>& results, bool deterministic,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for write");
  out.precision(17);
  out << "frame_id,state,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz,inlier_count,ms\n";
  for (const auto& r : results) {
    out << r.frame_id << "," << to_string(r.state) << pose_csv_fields(r.pose) << ","
        << r.inlier_count << ",";
    // Deterministic mode keeps wall time out of the byte-compared stream.
    if (deterministic) {
      out << "0.0";
    } else {
      out << r.timing.total_ms;
    }
    out << "\n";
  }
}

// Frames are materialized lazily: long textured runs would otherwise hold
// every rendered/decoded image in memory at once.
struct LoadedInput {
  TriangleMesh mesh;
  Intrinsics k;
  Pose t_init;
  int frame_count = 0;
  std::vector<FrameObservations> observations;  // scenario / observation-log modes
  std::vector<std::string> image_files;         // image-sequence mode
  bool render_images = false;
  std::optional<ScenarioData> scenario;

  FrameInput frame(int f) const {
    FrameInput fi;
    if (!observations.empty()) {
      fi.obs = observations[f];
      if (render_images) {
        RenderOptions opts;
        fi.rgb = render_synthetic_image(*scenario, f, opts);
      }
    } else {
      fi.rgb = load_rgb(image_files[f]);
      fi.gray = to_gray(*fi.rgb);
      fi.obs.frame_id = f;
      fi.obs.source = ObservationSource::detector;
    }
    return fi;
  }
};

std::vector<std::string> sorted_image_files(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

LoadedInput load_input(const RunConfig& cfg) {
  LoadedInput input;
  if (cfg.mode == InputMode::scenario) {
    ScenarioData data = generate_scenario(cfg.scenario);
    input.k = data.k;
    input.t_init = data.t_init;
    input.mesh = data.mesh;
    input.observations = data.frames;
    input.frame_count = int(data.frames.size());
    input.render_images = cfg.render_images;
    input.scenario = std::move(data);
    return input;
  }

  if (cfg.mesh_path.empty()) throw std::runtime_error("input.mesh is required");
  input.mesh = load_mesh(cfg.mesh_path);

  if (cfg.mode == InputMode::observations) {
    ObservationLog log = load_observation_log(cfg.observations_path);
    input.k = log.k;
    input.observations = std::move(log.frames);
    input.frame_count = int(input.observations.size());
  } else {
    input.image_files = sorted_image_files(cfg.image_dir);
    if (input.image_files.empty()) {
      throw std::runtime_error(cfg.image_dir + ": no image frames found");
    }
    input.frame_count = int(input.image_files.size());
    const ImageRGB first = load_rgb(input.image_files[0]);
    input.k.width = first.width;
    input.k.height = first.height;
    // Fallback intrinsics for uncalibrated sequences: f = 700 px, centered
    // principal point. Calibrated rigs should supply a registration instead.
    input.k.fx = input.k.fy = 700.0;
    input.k.cx = input.k.width / 2.0;
    input.k.cy = input.k.height / 2.0;
  }

  if (!cfg.t_init_path.empty()) {
    input.t_init = load_pose_txt(cfg.t_init_path);
  } else if (!cfg.correspondences_path.empty()) {
    const auto corrs = load_correspondences_csv(cfg.correspondences_path);
    input.t_init = solve_initial_registration(corrs, input.k).pose;
  } else {
    throw std::runtime_error("input.t_init or input.correspondences is required");
  }
  return input;
}

}  // namespace

RunArtifacts run_tracking(const RunConfig& cfg) {
  RunArtifacts artifacts;
  LoadedInput input = load_input(cfg);

  fs::create_directories(cfg.out_dir);

  PipelineConfig pcfg = cfg.pipeline;
  pcfg.seed = cfg.seed;
  Tracker tracker(std::move(input.mesh), input.k, pcfg, input.t_init);

  double loop_ms = 0.0;
  artifacts.results.reserve(input.frame_count);
  for (int f = 0; f < input.frame_count; ++f) {
    const FrameInput frame = input.frame(f);  // I/O happens here, outside the timed loop
    const FrameResult result = tracker.process_frame(frame);
    loop_ms += result.timing.total_ms;
    artifacts.results.push_back(result);
  }
  tracker.finish();
  artifacts.init_failed = tracker.state() == TrackingState::NotInitialized;

  if (pcfg.global_ba_at_end && tracker.map().keyframes.size() >= 2) {
    const BaResult ba = tracker.global_ba();
    artifacts.global_ba_initial_cost = ba.initial_cost;
    artifacts.global_ba_final_cost = ba.final_cost;
  }

  // Metrics.
  MetricsReport& m = artifacts.metrics;
  m.total_frames = int(artifacts.results.size());
  for (const auto& r : artifacts.results) {
    if (r.state != TrackingState::Tracking) ++m.lost_frames;
    if (m.init_frame < 0 && r.state == TrackingState::Tracking) m.init_frame = r.frame_id;
  }
  m.lost_fraction = m.total_frames > 0 ? double(m.lost_frames) / double(m.total_frames) : 0.0;
  m.fps = loop_ms > 0.0 ? 1000.0 * double(m.total_frames) / loop_ms : 0.0;
  {
    std::vector<double> mask_v, feat_v, opt_v, map_v, tot_v;
    for (const auto& r : artifacts.results) {
      mask_v.push_back(r.timing.mask_ms);
      feat_v.push_back(r.timing.features_ms);
      opt_v.push_back(r.timing.optimize_ms);
      map_v.push_back(r.timing.mapping_ms);
      tot_v.push_back(r.timing.total_ms);
    }
    m.mask_ms = percentiles(mask_v);
    m.features_ms = percentiles(feat_v);
    m.optimize_ms = percentiles(opt_v);
    m.mapping_ms = percentiles(map_v);
    m.total_ms = percentiles(tot_v);
  }

  if (input.scenario) {
    const GroundTruth& truth = input.scenario->truth;
    // Trajectory error over tracked frames.
    std::vector<std::optional<Pose>> est(artifacts.results.size());
    for (size_t f = 0; f < artifacts.results.size(); ++f) est[f] = artifacts.results[f].pose;
    if (std::any_of(est.begin(), est.end(), [](const auto& p) { return bool(p); })) {
      m.traj = compute_traj_error(est, truth.cam_rel_organ);
    }

    // TRE over 20 uniformly sampled tracked frames (seed-controlled).
    std::vector<int> tracked;
    for (int f = 0; f < int(artifacts.results.size()); ++f) {
      if (artifacts.results[f].pose) tracked.push_back(f);
    }
    if (!tracked.empty()) {
      std::mt19937_64 rng(cfg.seed ^ 0x77e5a3);
      std::vector<int> sample = tracked;
      std::shuffle(sample.begin(), sample.end(), rng);
      if (sample.size() > 20) sample.resize(20);
      std::sort(sample.begin(), sample.end());
      std::vector<double> tre_vals;
      for (int f : sample) {
        try {
          tre_vals.push_back(compute_tre(truth.markers, *artifacts.results[f].pose,
                                         truth.cam_rel_organ[f], input.k));
        } catch (const std::domain_error&) {
          // Marker out of view at this frame; skip the sample.
        }
      }
      if (!tre_vals.empty()) {
        m.tre_samples = int(tre_vals.size());
        m.tre_mean = 0.0;
        for (double v : tre_vals) m.tre_mean += v;
        m.tre_mean /= double(tre_vals.size());
        std::sort(tre_vals.begin(), tre_vals.end());
        m.tre_median = tre_vals[tre_vals.size() / 2];
        m.tre_max = tre_vals.back();
      }
    }

    // Scale ratio: RMS point spread about the mesh centroid, est vs truth.
    const Vec3 center = tracker.mesh().centroid();
    double est_sq = 0.0, gt_sq = 0.0;
    int n = 0;
    for (const auto& [pid, mp] : tracker.map().points) {
      if (mp.feature_id < 0 || mp.feature_id >= truth.organ_feature_count) continue;
      const Vec3& gt_point = truth.organ_points[size_t(mp.feature_id)];
      est_sq += (mp.position - center).squaredNorm();
      gt_sq += (gt_point - center).squaredNorm();
      ++n;
    }
    if (n > 0 && gt_sq > 0.0) m.scale_ratio = std::sqrt(est_sq / gt_sq);
    artifacts.scenario = std::move(input.scenario);
  }

  // Artifacts on disk.
  artifacts.trajectory_csv = (fs::path(cfg.out_dir) / "trajectory.csv").string();
  write_trajectory_csv(artifacts.results, pcfg.deterministic, artifacts.trajectory_csv);
  if (pcfg.texture_keyframes) {
    artifacts.textured_ply = (fs::path(cfg.out_dir) / "textured.ply").string();
    save_mesh_ply(tracker.mesh(), artifacts.textured_ply);
  }
  artifacts.report_json = (fs::path(cfg.out_dir) / "report.json").string();
  std::ofstream report(artifacts.report_json);
  report << report_to_json(cfg, artifacts) << "\n";
  return artifacts;
}

std::string report_to_json(const RunConfig& cfg, const RunArtifacts& artifacts) {
  const MetricsReport& m = artifacts.metrics;
  json j;
  j["config_hash"] = fnv1a_hash(cfg.config_text);
  j["toggles"] = {{"prior_init", cfg.pipeline.enable_prior_init},
                  {"pseudo_mask", cfg.pipeline.enable_mask},
                  {"shape_prior_ba", cfg.pipeline.enable_shape_prior}};
  j["metrics"] = {
      {"tre", {{"mean", m.tre_mean}, {"median", m.tre_median}, {"max", m.tre_max},
               {"samples", m.tre_samples}}},
      {"traj", {{"trans_rmse", m.traj.trans_rmse},
                {"rot_rmse_deg", m.traj.rot_rmse_rad * 180.0 / M_PI},
                {"compared_frames", m.traj.compared_frames},
                {"skipped_frames", m.traj.skipped_frames}}},
      {"lost_fraction", m.lost_fraction},
      {"lost_frames", m.lost_frames},
      {"total_frames", m.total_frames},
      {"init_frame", m.init_frame},
      {"scale_ratio", m.scale_ratio},
      {"init_failed", artifacts.init_failed},
      {"global_ba", {{"initial_cost", artifacts.global_ba_initial_cost},
                     {"final_cost", artifacts.global_ba_final_cost}}},
  };
  auto pct = [](const Percentiles& p) {
    return json{{"p50", p.p50}, {"p90", p.p90}, {"p99", p.p99}};
  };
  j["timing"] = {
      {"fps", m.fps},          {"mask_ms", pct(m.mask_ms)},       {"features_ms", pct(m.features_ms)},
      {"optimize_ms", pct(m.optimize_ms)}, {"mapping_ms", pct(m.mapping_ms)},
      {"total_ms", pct(m.total_ms)},
  };
  return j.dump(2);
}

AblationArtifacts run_ablation(const RunConfig& cfg, const std::string& toggle) {
  auto flip = [&](RunConfig c, bool value) {
    if (toggle == "prior_init") {
      c.pipeline.enable_prior_init = value;
    } else if (toggle == "pseudo_mask") {
      c.pipeline.enable_mask = value;
    } else if (toggle == "shape_prior_ba") {
      c.pipeline.enable_shape_prior = value;
    } else {
      throw std::runtime_error("unknown toggle '" + toggle +
                               "' (prior_init|pseudo_mask|shape_prior_ba)");
    }
    return c;
  };
  AblationArtifacts out;
  RunConfig on_cfg = flip(cfg, true);
  on_cfg.out_dir = (fs::path(cfg.out_dir) / (toggle + "_on")).string();
  RunConfig off_cfg = flip(cfg, false);
  off_cfg.out_dir = (fs::path(cfg.out_dir) / (toggle + "_off")).string();
  out.on = run_tracking(on_cfg);
  out.off = run_tracking(off_cfg);

  json j;
  j["toggle"] = toggle;
  // Exactly one toggle differs between the paired runs.
  j["paired"] = {{"on",
                  {{"lost_fraction", out.on.metrics.lost_fraction},
                   {"tre_mean", out.on.metrics.tre_mean},
                   {"trans_rmse", out.on.metrics.traj.trans_rmse},
                   {"scale_ratio", out.on.metrics.scale_ratio},
                   {"init_failed", out.on.init_failed}}},
                 {"off",
                  {{"lost_fraction", out.off.metrics.lost_fraction},
                   {"tre_mean", out.off.metrics.tre_mean},
                   {"trans_rmse", out.off.metrics.traj.trans_rmse},
                   {"scale_ratio", out.off.metrics.scale_ratio},
                   {"init_failed", out.off.init_failed}}}};
  fs::create_directories(cfg.out_dir);
  out.comparison_json = (fs::path(cfg.out_dir) / ("ablation_" + toggle + ".json")).string();
  std::ofstream f(out.comparison_json);
  f << j.dump(2) << "\n";
  return out;
}

}  // namespace mbtrack
