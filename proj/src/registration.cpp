#include "mbtrack/registration.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mbtrack {

const std::vector<Mat3>& octahedral_rotations() {
  static const std::vector<Mat3> rotations = [] {
    std::vector<Mat3> out;
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& perm : perms) {
      for (int signs = 0; signs < 8; ++signs) {
        Mat3 r = Mat3::Zero();
        for (int row = 0; row < 3; ++row) {
          r(row, perm[row]) = (signs >> row) & 1 ? -1.0 : 1.0;
        }
        if (r.determinant() > 0.5) out.push_back(r);
      }
    }
    return out;  // 24 proper rotations
  }();
  return rotations;
}

namespace {

double rms_pixel_residual(const std::vector<PoseObservation>& obs, const Intrinsics& k,
                          const Pose& pose) {
  double sum = 0.0;
  for (const auto& o : obs) {
    sum += reprojection_residual(pose, k, o.point, o.pixel).squaredNorm();
  }
  return std::sqrt(sum / double(obs.size()));
}

}  // namespace

RegistrationResult solve_initial_registration(const std::vector<Correspondence>& corrs,
                                              const Intrinsics& k,
                                              const RegistrationConfig& config) {
  if (corrs.size() < 4) {
    throw std::invalid_argument("solve_initial_registration: fewer than 4 correspondences");
  }

  std::vector<PoseObservation> obs;
  obs.reserve(corrs.size());
  Vec3 centroid3 = Vec3::Zero();
  Vec2 centroid2 = Vec2::Zero();
  for (const auto& c : corrs) {
    obs.push_back(PoseObservation{c.point3, c.pixel});
    centroid3 += c.point3;
    centroid2 += c.pixel;
  }
  centroid3 /= double(corrs.size());
  centroid2 /= double(corrs.size());

  // Collinearity check on the centered 3D points.
  Mat3 cov = Mat3::Zero();
  double spread3 = 0.0, spread2 = 0.0;
  for (const auto& c : corrs) {
    const Vec3 d = c.point3 - centroid3;
    cov += d * d.transpose();
    spread3 += d.squaredNorm();
    spread2 += (c.pixel - centroid2).squaredNorm();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  if (eig.eigenvalues()(1) <= 1e-12 * std::max(eig.eigenvalues()(2), 1e-300)) {
    throw std::invalid_argument("solve_initial_registration: collinear 3D points");
  }
  spread3 = std::sqrt(spread3 / double(corrs.size()));
  spread2 = std::sqrt(spread2 / double(corrs.size()));

  // Depth at which the projected 3D spread matches the observed pixel spread.
  const double f_mean = 0.5 * (k.fx + k.fy);
  const double d0 = spread2 > 1e-9 ? f_mean * spread3 / spread2 : 10.0 * spread3;
  const Vec3 mean_dir =
      Vec3{(centroid2.x() - k.cx) / k.fx, (centroid2.y() - k.cy) / k.fy, 1.0}.normalized();

  struct Seed {
    Pose pose;
  };
  std::vector<Seed> seeds;
  for (const Mat3& r : octahedral_rotations()) {
    for (double factor : config.depth_factors) {
      const Vec3 t = factor * d0 * mean_dir - r * centroid3;
      seeds.push_back(Seed{Pose{r, t}});
    }
  }
  for (const Pose& p : config.extra_seeds) seeds.push_back(Seed{p});

  RegistrationResult result;
  result.per_start_residuals.reserve(seeds.size());
  int best_seed = -1;
  double best_rms = std::numeric_limits<double>::max();
  bool any_converged = false;
  for (int s = 0; s < int(seeds.size()); ++s) {
    const PoseOnlyResult lm = optimize_pose_only(obs, k, seeds[s].pose, config.kernel,
                                                 config.max_iterations, config.tolerance);
    const double rms = rms_pixel_residual(obs, k, lm.pose);
    result.per_start_residuals.push_back({s, rms});
    any_converged = any_converged || lm.converged;
    if (rms < best_rms) {
      best_rms = rms;
      best_seed = s;
      result.pose = lm.pose;
    }
  }
  result.rms_px = best_rms;
  result.converged = any_converged;
  (void)best_seed;
  return result;
}

std::vector<Correspondence> load_correspondences_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::vector<Correspondence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string field;
    double vals[5];
    bool ok = true;
    for (int i = 0; i < 5 && ok; ++i) {
      if (!std::getline(ss, field, ',')) {
        ok = false;
        break;
      }
      try {
        vals[i] = std::stod(field);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      if (lineno == 1) continue;  // header row
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad correspondence row");
    }
    Correspondence c;
    c.point3 = Vec3{vals[0], vals[1], vals[2]};
    c.pixel = Vec2{vals[3], vals[4]};
    c.id = int(out.size());
    out.push_back(c);
  }
  return out;
}

void save_correspondences_csv(const std::vector<Correspondence>& corrs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for write");
  out.precision(17);
  out << "x,y,z,u,v\n";
  for (const auto& c : corrs) {
    out << c.point3.x() << "," << c.point3.y() << "," << c.point3.z() << "," << c.pixel.x() << ","
        << c.pixel.y() << "\n";
  }
}

}  // namespace mbtrack
