// Initial 3D-2D registration from user- or simulator-supplied
// correspondences: deterministic multi-start robust pose optimization.
#pragma once

#include "mbtrack/geometry.hpp"
#include "mbtrack/optimizer.hpp"

#include <string>
#include <vector>

namespace mbtrack {

struct Correspondence {
  Vec3 point3;  // on the prior mesh
  Vec2 pixel;
  int id = 0;
};

struct RegistrationConfig {
  int max_iterations = 100;
  double tolerance = 1e-10;
  RobustKernel kernel = RobustKernel::huber(3.0);
  std::vector<double> depth_factors{0.5, 1.0, 2.0};  // relative to the scale-matched depth
  std::vector<Pose> extra_seeds;                     // e.g. the last known pose
};

struct RegistrationResult {
  Pose pose;
  double rms_px = 0.0;  // plain RMS pixel residual of the winning start
  struct StartResidual {
    int seed_id;
    double rms_px;
  };
  std::vector<StartResidual> per_start_residuals;
  bool converged = true;  // false when every start diverged
};

/// Rotation seeds: the 24 rotations of the octahedral group.
const std::vector<Mat3>& octahedral_rotations();

/// Minimizes the robust reprojection cost from every seed (24 rotations x
/// depth guesses + extra seeds) and returns the best start. Throws
/// std::invalid_argument for < 4 correspondences or collinear 3D points.
RegistrationResult solve_initial_registration(const std::vector<Correspondence>& corrs,
                                              const Intrinsics& k,
                                              const RegistrationConfig& config = {});

/// CSV with columns x,y,z,u,v; '#' comments and a header row are tolerated.
std::vector<Correspondence> load_correspondences_csv(const std::string& path);
void save_correspondences_csv(const std::vector<Correspondence>& corrs, const std::string& path);

}  // namespace mbtrack
