#include "mbtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mbtrack {

double compute_tre(const std::array<Vec3, 3>& markers, const Pose& est_pose,
                   const Intrinsics& k_est, const Pose& gt_pose, const Intrinsics& k_gt) {
  double sum = 0.0;
  for (const Vec3& m : markers) {
    const auto gt_px = project_point(gt_pose, k_gt, m);
    if (!gt_px || !k_gt.in_bounds(*gt_px)) {
      throw std::domain_error("compute_tre: marker not visible under the ground-truth pose");
    }
    const auto est_px = project_point(est_pose, k_est, m);
    if (!est_px) {
      // Marker behind the estimated camera: cap with the image diagonal.
      sum += std::hypot(double(k_est.width), double(k_est.height));
      continue;
    }
    sum += (*est_px - *gt_px).norm();
  }
  return sum / double(markers.size());
}

TrajError compute_traj_error(const std::vector<std::optional<Pose>>& est,
                             const std::vector<Pose>& gt) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("compute_traj_error: sequences must align by frame id");
  }
  TrajError out;
  double trans_sq = 0.0, rot_sq = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    if (!est[i]) {
      ++out.skipped_frames;
      continue;
    }
    const Pose rel = gt[i].inverse().compose(*est[i]);
    trans_sq += rel.t.squaredNorm();
    const double ang = 2.0 * std::atan2(rel.q.vec().norm(), std::abs(rel.q.w()));
    rot_sq += ang * ang;
    ++out.compared_frames;
  }
  if (out.compared_frames == 0) throw std::domain_error("compute_traj_error: empty overlap");
  out.trans_rmse = std::sqrt(trans_sq / double(out.compared_frames));
  out.rot_rmse_rad = std::sqrt(rot_sq / double(out.compared_frames));
  return out;
}

Percentiles percentiles(std::vector<double> values) {
  Percentiles out;
  if (values.empty()) return out;
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double pos = q * double(values.size() - 1);
    const size_t lo = size_t(pos);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - double(lo);
    return (1.0 - frac) * values[lo] + frac * values[hi];
  };
  out.p50 = at(0.50);
  out.p90 = at(0.90);
  out.p99 = at(0.99);
  return out;
}

}  // namespace mbtrack
