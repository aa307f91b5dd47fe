// Robust nonlinear least squares over poses and map points: motion-only pose
// refinement and bundle adjustment with an optional point-to-surface prior.
//
// Pose parametrization is the 6-dim tangent [omega | upsilon] applied by
// left-multiplicative retraction (see Pose::retract). Reprojection residuals
// are 2D pixel differences after perspective division.
#pragma once

#include "mbtrack/geometry.hpp"
#include "mbtrack/surface_index.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace mbtrack {

struct RobustKernel {
  enum class Kind { none, huber };
  Kind kind = Kind::huber;
  double delta = 3.0;

  static RobustKernel none() { return {Kind::none, 0.0}; }
  static RobustKernel huber(double delta) { return {Kind::huber, delta}; }
};

/// rho(r): r^2 without a kernel; Huber: r^2 for r <= delta, delta*(2r - delta)
/// beyond the elbow.
double robust_cost(double residual_norm, const RobustKernel& kernel);
/// IRLS weight rho'(r) / (2r), continuous at the elbow.
double robust_weight(double residual_norm, const RobustKernel& kernel);

struct OptimizerConfig {
  double w_shape = 100.0;
  int max_iterations = 50;
  RobustKernel reprojection_kernel = RobustKernel::huber(3.0);
  // Scene units; delta <= 0 means "resolve to 2% of the mesh bbox diagonal"
  // (done by the pipeline once the mesh is known).
  RobustKernel shape_kernel = RobustKernel::huber(0.0);
  double tolerance = 1e-10;  // relative cost decrease
};

// Reprojection residual and its analytic Jacobians. The camera-frame depth is
// clamped to 1e-6 so the residual stays defined while LM explores.
Vec2 reprojection_residual(const Pose& pose, const Intrinsics& k, const Vec3& point,
                           const Vec2& pixel, Eigen::Matrix<double, 2, 6>* j_pose = nullptr,
                           Eigen::Matrix<double, 2, 3>* j_point = nullptr);

// Shape residual with the closest-point anchor held fixed: r = point - anchor.
Vec3 shape_residual(const Vec3& point, const Vec3& anchor, Mat3* j_point = nullptr);

struct PoseObservation {
  Vec3 point;
  Vec2 pixel;
};

struct PoseOnlyResult {
  Pose pose;
  double cost = 0.0;  // robust cost over the observations used
  bool converged = false;
  int iterations = 0;
};

/// Levenberg-Marquardt over a single pose with all points fixed.
PoseOnlyResult optimize_pose_only(const std::vector<PoseObservation>& observations,
                                  const Intrinsics& k, const Pose& initial,
                                  const RobustKernel& kernel, int max_iterations = 100,
                                  double tolerance = 1e-10);

enum class PoseStatus { ok, diverged };

struct PoseResult {
  Pose pose;
  std::vector<uint8_t> inliers;  // per observation
  int inlier_count = 0;
  PoseStatus status = PoseStatus::ok;
};

/// Motion-only refinement: four rounds of optimize-then-reflag; observations
/// with residual > 2*delta are outliers. Throws std::invalid_argument below 6
/// observations. Returns the initial pose when the cost increased.
PoseResult optimize_pose(const std::vector<PoseObservation>& observations, const Intrinsics& k,
                         const Pose& initial, const OptimizerConfig& config);

/// Bundle-adjustment problem: poses and points with fixed flags, reprojection
/// edges, and an optional set of shape-constrained points.
struct BaProblem {
  struct ReprojEdge {
    int pose = 0;
    int point = 0;
    Vec2 pixel;
  };

  Intrinsics k;
  std::vector<Pose> poses;
  std::vector<uint8_t> pose_fixed;
  std::vector<Vec3> points;
  std::vector<uint8_t> point_fixed;
  std::vector<ReprojEdge> edges;
  std::vector<int> shape_points;          // point indices carrying shape edges
  const SurfaceIndex* surface = nullptr;  // required when shape_points non-empty

  // Plain-text debug format, one line per vertex/edge.
  void save_text(std::ostream& out) const;
  static BaProblem load_text(std::istream& in);
};

enum class BaStatus { converged, max_iterations, singular };

struct BaResult {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  BaStatus status = BaStatus::converged;
};

/// Damped normal equations with pose/point block structure and a Schur
/// complement on the point blocks. Closest-point anchors are refreshed at the
/// start of every outer iteration and held fixed through the inner solve.
/// Accepted steps never increase the robust cost. Throws std::invalid_argument
/// on a missing gauge or an under-constrained free point.
BaResult bundle_adjust(BaProblem& problem, const OptimizerConfig& config);

/// Total robust cost of the problem at its current state (anchors refreshed).
double ba_cost(const BaProblem& problem, const OptimizerConfig& config);

}  // namespace mbtrack
