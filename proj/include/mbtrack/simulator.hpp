// Synthetic scene generator: ground-truth camera/organ trajectories, noisy
// feature observation streams and rendered frames for the challenge
// scenarios (fast motion, out-of-FoV, occlusion, organ-background motion).
#pragma once

#include "mbtrack/features.hpp"
#include "mbtrack/geometry.hpp"
#include "mbtrack/image.hpp"
#include "mbtrack/mesh.hpp"
#include "mbtrack/registration.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace mbtrack {

struct CameraWaypoint {
  Vec3 position;  // lab frame
  Vec3 look_at;
  double duration_s = 1.0;  // segment duration to the next waypoint
};

struct SimEvent {
  enum class Type { fast_motion, out_of_fov, occlusion, organ_motion };
  Type type = Type::fast_motion;
  int start_frame = 0;
  int end_frame = 0;        // exclusive
  double speed_factor = 3.0;  // fast_motion
  double yaw_deg = 80.0;      // out_of_fov camera excursion
  double rect[4] = {0, 0, 0, 0};  // occlusion: x0, y0, x1, y1 (pixels)
};

struct NoiseSpec {
  double pixel_sigma = 1.0;
  double dropout = 0.0;
  double outlier = 0.0;
};

struct ScenarioSpec {
  enum class Organ { icosphere, ellipsoid, bumpy_ellipsoid, file };
  Organ organ = Organ::icosphere;
  std::string mesh_path;  // when organ == file
  int subdivisions = 5;   // 20480 faces
  double organ_radius = 40.0;  // millimeters
  Vec3 ellipsoid_radii{50.0, 40.0, 30.0};
  double bump_amplitude = 0.12;

  // Background features live behind the organ (an abdominal wall), never in
  // the camera-organ corridor.
  int organ_features = 300;
  int background_features = 200;
  Vec3 background_min{-250.0, -250.0, 100.0};
  Vec3 background_max{250.0, 250.0, 200.0};

  int frames = 1000;
  double fps = 30.0;
  Intrinsics k{700.0, 700.0, 640.0, 360.0, 1280, 720};

  std::vector<CameraWaypoint> camera_waypoints;  // default: gentle orbit
  std::vector<Pose> organ_waypoints;             // organ->lab; default identity
  std::vector<SimEvent> events;
  NoiseSpec noise;
  uint64_t seed = 1;
};

struct GroundTruth {
  std::vector<Pose> cam_in_lab;     // lab -> camera (extrinsic view)
  std::vector<Pose> organ_in_lab;   // organ -> lab placement
  std::vector<Pose> cam_rel_organ;  // organ -> camera: what the tracker estimates
  std::vector<Vec3> organ_points;      // organ frame, feature ids [0, n_organ)
  std::vector<Vec3> background_points; // lab frame, ids [n_organ, n_organ+n_bg)
  std::array<Vec3, 3> markers;         // organ frame, for TRE
  int organ_feature_count = 0;
};

struct ScenarioData {
  TriangleMesh mesh;
  std::vector<FrameObservations> frames;
  GroundTruth truth;
  Pose t_init;
  std::vector<Correspondence> correspondences;  // 20 exact frame-0 pairs
  Intrinsics k;
  uint64_t seed = 0;
};

/// Deterministic generation of the full scenario (same spec + seed ->
/// identical streams). Feature ids are persistent; organ/background labels
/// stay inside GroundTruth.
ScenarioData generate_scenario(const ScenarioSpec& spec);

struct RenderOptions {
  bool constant_albedo = false;
  uint8_t albedo_value = 180;  // used when constant_albedo
  bool shading = true;
  bool background_speckle = true;
};

/// Rasterizes the organ with a seeded per-face albedo over a procedural
/// background plane; deterministic for a fixed spec seed.
ImageRGB render_synthetic_image(const ScenarioData& data, int frame, const RenderOptions& opts);

// Builtin scenario presets (the evaluation harness names).
ScenarioSpec default_scenario(uint64_t seed);
ScenarioSpec organ_motion_scenario(uint64_t seed);
ScenarioSpec out_of_fov_scenario(uint64_t seed);
ScenarioSpec occlusion_scenario(uint64_t seed);
ScenarioSpec fast_motion_scenario(uint64_t seed);
ScenarioSpec static_opening_scenario(uint64_t seed);  // zero-parallax start
ScenarioSpec scenario_by_name(const std::string& name, uint64_t seed);

// Observation-log round trip: header (frame count + intrinsics) followed by
// one "frame_id feature_id u v" record per observation.
void save_observation_log(const std::vector<FrameObservations>& frames, const Intrinsics& k,
                          const std::string& path);
struct ObservationLog {
  std::vector<FrameObservations> frames;
  Intrinsics k;
};
ObservationLog load_observation_log(const std::string& path);

/// Ground-truth sidecar CSV: per-frame cam-rel-organ pose (12 numbers) and
/// the three marker projections.
void save_ground_truth_csv(const GroundTruth& truth, const Intrinsics& k,
                           const std::string& path);

void save_pose_txt(const Pose& pose, const std::string& path);
Pose load_pose_txt(const std::string& path);

}  // namespace mbtrack
