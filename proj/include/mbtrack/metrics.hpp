// Evaluation metrics: 2D target registration error, trajectory error,
// lost-frame fraction and timing summaries.
#pragma once

#include "mbtrack/geometry.hpp"
#include "mbtrack/pipeline.hpp"

#include <array>
#include <optional>
#include <vector>

namespace mbtrack {

/// Mean pixel distance between marker projections under the estimated and
/// ground-truth poses (each with its own intrinsics). Throws
/// std::domain_error when a marker is not visible under the ground truth.
double compute_tre(const std::array<Vec3, 3>& markers, const Pose& est_pose,
                   const Intrinsics& k_est, const Pose& gt_pose, const Intrinsics& k_gt);

inline double compute_tre(const std::array<Vec3, 3>& markers, const Pose& est_pose,
                          const Pose& gt_pose, const Intrinsics& k) {
  return compute_tre(markers, est_pose, k, gt_pose, k);
}

struct TrajError {
  double trans_rmse = 0.0;
  double rot_rmse_rad = 0.0;
  int compared_frames = 0;
  int skipped_frames = 0;  // frames without an estimate (lost / pre-init)
};

/// RMSE over per-frame relative errors gt_i^-1 * est_i; frames without an
/// estimate are excluded and counted. Throws std::domain_error when no frame
/// overlaps.
TrajError compute_traj_error(const std::vector<std::optional<Pose>>& est,
                             const std::vector<Pose>& gt);

struct Percentiles {
  double p50 = 0.0, p90 = 0.0, p99 = 0.0;
};

Percentiles percentiles(std::vector<double> values);

struct MetricsReport {
  double tre_mean = 0.0, tre_median = 0.0, tre_max = 0.0;
  int tre_samples = 0;
  TrajError traj;
  double lost_fraction = 0.0;
  int lost_frames = 0;
  int total_frames = 0;
  int init_frame = -1;  // first frame with state == Tracking
  double scale_ratio = 1.0;  // estimated / true RMS point spread
  double fps = 0.0;          // tracking loop only, I/O excluded
  Percentiles mask_ms, features_ms, optimize_ms, mapping_ms, total_ms;
};

}  // namespace mbtrack
