// Tracking state machine: prior-shape initialization, per-frame pseudo-mask
// tracking, keyframe and map management, loss detection and relocalization.
#pragma once

#include "mbtrack/features.hpp"
#include "mbtrack/geometry.hpp"
#include "mbtrack/image.hpp"
#include "mbtrack/map.hpp"
#include "mbtrack/mesh.hpp"
#include "mbtrack/optimizer.hpp"
#include "mbtrack/raster.hpp"
#include "mbtrack/surface_index.hpp"

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <thread>
#include <vector>

namespace mbtrack {

enum class TrackingState { NotInitialized, Tracking, Lost };

const char* to_string(TrackingState s);

struct PipelineConfig {
  // Features (image mode).
  int corner_budget = 600;
  int fast_threshold = 20;
  TrackConfig track;

  // Pseudo-mask.
  bool enable_mask = true;
  int dilation_px = 5;  // at 1280 px image width, scaled with width

  // Initialization.
  bool enable_prior_init = true;
  int min_init_depth_points = 20;
  int two_view_min_matches = 50;
  double two_view_min_parallax_deg = 1.0;

  // Tracking gates and keyframe policy.
  int min_inliers = 15;
  double kf_inlier_ratio = 0.7;
  int kf_max_interval = 20;
  double triangulation_reproj_px = 3.0;
  // New map points and BA-adjustable points both need real parallax;
  // under-observed points keep their creation depth (prior or triangulated).
  double min_parallax_deg = 1.5;

  // Relocalization.
  int reloc_min_matches = 15;
  int reloc_min_inliers = 15;
  double reloc_px_gate = 3.0;
  int reloc_descriptor_gate = 64;

  // Mapping.
  bool enable_shape_prior = true;
  int local_ba_window = 5;
  int covis_min_shared = 15;
  bool texture_keyframes = true;
  bool global_ba_at_end = true;
  OptimizerConfig opt;

  // Runtime.
  bool deterministic = true;  // sequential tracking + mapping
  uint64_t seed = 1;
  double surface_density = 0.0;  // 0 = auto (0.5% bbox diagonal spacing)
};

/// One frame of input: simulator observations, a camera image, or both
/// (observations drive tracking; the image, when present, feeds texturing).
struct FrameInput {
  FrameObservations obs;
  std::optional<ImageGray> gray;
  std::optional<ImageRGB> rgb;
};

struct StageTimings {
  double mask_ms = 0.0;
  double features_ms = 0.0;
  double optimize_ms = 0.0;
  double mapping_ms = 0.0;
  double total_ms = 0.0;
};

struct FrameResult {
  int frame_id = 0;
  TrackingState state = TrackingState::NotInitialized;
  std::optional<Pose> pose;  // present iff state == Tracking
  int inlier_count = 0;
  double mask_coverage = 0.0;
  StageTimings timing;
};

struct StateTransition {
  int frame_id;
  TrackingState from;
  TrackingState to;
};

// Builds a BA problem over the given keyframes (fixed ones contribute
// constant poses); points observed by included keyframes are free unless
// under-constrained. Shape edges attached to every free point when requested.
struct BaBinding {
  BaProblem problem;
  std::vector<int> kf_of_pose;       // pose index -> keyframe id
  std::vector<int64_t> id_of_point;  // point index -> map point id
};

BaBinding build_ba_problem(const SlamMap& map, const std::vector<int>& optimizable_kfs,
                           const std::vector<int>& fixed_kfs, const Intrinsics& k,
                           bool with_shape, const SurfaceIndex* surface,
                           double free_parallax_deg = 1.5);

void write_back(const BaBinding& binding, SlamMap& map);

/// Local BA around a center keyframe: covisible keyframes (sharing >=
/// min_shared points, best `window` of them) optimize together; outside
/// observers are held fixed.
BaResult local_bundle_adjust(SlamMap& map, int center_kf, int window, const Intrinsics& k,
                             const OptimizerConfig& config, bool with_shape,
                             const SurfaceIndex* surface, int min_shared = 15,
                             double free_parallax_deg = 1.5);

/// Global BA over all keyframes (keyframe 1 fixed) and all points.
/// Throws std::logic_error with fewer than 2 keyframes.
BaResult run_global_ba(SlamMap& map, const Intrinsics& k, const OptimizerConfig& config,
                       bool with_shape, const SurfaceIndex* surface,
                       double free_parallax_deg = 1.5);

class Tracker {
 public:
  Tracker(TriangleMesh mesh, const Intrinsics& k, const PipelineConfig& config,
          const Pose& t_init);
  ~Tracker();

  Tracker(const Tracker&) = delete;
  Tracker& operator=(const Tracker&) = delete;

  /// Feeds one frame; dispatches on the tracking state.
  FrameResult process_frame(const FrameInput& input);

  /// Prior-shape initialization from a single frame: features inside the
  /// rendered mask are back-projected through the mesh ("simulated depth").
  /// Fails (state stays NotInitialized) when fewer than
  /// min_init_depth_points features receive depth.
  FrameResult initialize_prior(const FrameInput& frame0);

  /// Runs global BA (>= 2 keyframes required) and returns the cost report.
  BaResult global_ba();

  /// Drains the mapping queue (parallel mode) and joins the worker.
  void finish();

  TrackingState state() const { return state_; }
  const SlamMap& map() const { return map_; }
  SlamMap& mutable_map() { return map_; }
  const TriangleMesh& mesh() const { return mesh_; }
  const SurfaceIndex& surface() const { return *surface_; }
  const std::vector<StateTransition>& transitions() const { return transitions_; }
  const Pose& initial_registration() const { return t_init_; }
  std::string last_error() const { return last_error_; }

 private:
  struct MatchedPoint {
    int64_t point_id;
    Vec3 position;
    Vec2 pixel;
    int obs_index;
  };

  FrameResult track_frame(const FrameInput& input, StageTimings& timing);
  FrameResult relocalize(const FrameInput& input, StageTimings& timing);
  FrameResult try_two_view_init(const FrameInput& input);

  FrameObservations acquire_observations(const FrameInput& input, const BinaryMask& mask,
                                         bool lost);
  void set_state(int frame_id, TrackingState next);
  BinaryMask current_mask(int frame_id) const;
  void insert_keyframe(const FrameInput& input, const FrameObservations& obs, const Pose& pose,
                       const std::vector<MatchedPoint>& matches,
                       const std::vector<uint8_t>& inliers);
  void cull_recent_points();
  void mapping_task(int kf_id, std::optional<ImageRGB> image);
  void mapping_worker();

  TriangleMesh mesh_;
  Intrinsics k_;
  PipelineConfig cfg_;
  Pose t_init_;
  std::unique_ptr<SurfaceIndex> surface_;
  std::unique_ptr<MeshBvh> bvh_;
  int eff_dilation_ = 5;

  TrackingState state_ = TrackingState::NotInitialized;
  SlamMap map_;
  Pose prev_pose_;        // pose of frame i-1 (drives the pseudo-mask)
  Pose velocity_;         // prev relative motion, seeds the next frame
  bool have_velocity_ = false;
  int ref_kf_id_ = 0;
  int frames_since_kf_ = 0;
  std::vector<StateTransition> transitions_;
  std::string last_error_;

  // Image-mode front end.
  struct TrackEntry {
    int64_t id;
    Vec2 pixel;
  };
  std::vector<TrackEntry> active_tracks_;
  std::optional<ImageGray> prev_gray_;
  int64_t next_track_id_ = 1;

  // Two-view fallback state.
  std::optional<FrameObservations> init_frame0_;

  // Recent keyframes for triangulation matching / culling.
  std::vector<int> recent_kfs_;
  std::map<int, std::unordered_map<int64_t, int>> kf_feature_index_;

  // Parallel mode.
  mutable std::shared_mutex map_mutex_;
  std::mutex mesh_mutex_;
  std::thread worker_;
  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<std::pair<int, std::optional<ImageRGB>>> kf_queue_;
  bool stop_worker_ = false;
  static constexpr size_t kQueueCapacity = 3;
};

}  // namespace mbtrack
