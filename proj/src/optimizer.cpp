#include "mbtrack/optimizer.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mbtrack {

double robust_cost(double r, const RobustKernel& kernel) {
  if (kernel.kind == RobustKernel::Kind::none) return r * r;
  return r <= kernel.delta ? r * r : kernel.delta * (2.0 * r - kernel.delta);
}

double robust_weight(double r, const RobustKernel& kernel) {
  if (kernel.kind == RobustKernel::Kind::none) return 1.0;
  return r <= kernel.delta ? 1.0 : kernel.delta / r;
}

Vec2 reprojection_residual(const Pose& pose, const Intrinsics& k, const Vec3& point,
                           const Vec2& pixel, Eigen::Matrix<double, 2, 6>* j_pose,
                           Eigen::Matrix<double, 2, 3>* j_point) {
  const Vec3 pc = pose.apply(point);
  const double z = std::max(pc.z(), 1e-6);
  const Vec2 projected{k.fx * pc.x() / z + k.cx, k.fy * pc.y() / z + k.cy};
  if (j_pose || j_point) {
    Eigen::Matrix<double, 2, 3> d_pix;
    d_pix << k.fx / z, 0.0, -k.fx * pc.x() / (z * z),
             0.0, k.fy / z, -k.fy * pc.y() / (z * z);
    if (j_pose) {
      Mat3 skew;
      skew << 0.0, -pc.z(), pc.y(), pc.z(), 0.0, -pc.x(), -pc.y(), pc.x(), 0.0;
      j_pose->leftCols<3>() = d_pix * (-skew);
      j_pose->rightCols<3>() = d_pix;
    }
    if (j_point) *j_point = d_pix * pose.rotation();
  }
  return projected - pixel;
}

Vec3 shape_residual(const Vec3& point, const Vec3& anchor, Mat3* j_point) {
  if (j_point) *j_point = Mat3::Identity();
  return point - anchor;
}

namespace {

double pose_cost(const std::vector<const PoseObservation*>& active, const Intrinsics& k,
                 const Pose& pose, const RobustKernel& kernel) {
  double cost = 0.0;
  for (const PoseObservation* o : active) {
    cost += robust_cost(reprojection_residual(pose, k, o->point, o->pixel).norm(), kernel);
  }
  return cost;
}

PoseOnlyResult pose_lm(const std::vector<const PoseObservation*>& active, const Intrinsics& k,
                       const Pose& initial, const RobustKernel& kernel, int max_iterations,
                       double tolerance) {
  Pose pose = initial;
  double cost = pose_cost(active, k, pose, kernel);
  double lambda = 1e-4;
  bool converged = false;
  int it = 0;
  for (; it < max_iterations && !converged; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 b = Vec6::Zero();
    for (const PoseObservation* o : active) {
      Eigen::Matrix<double, 2, 6> j;
      const Vec2 r = reprojection_residual(pose, k, o->point, o->pixel, &j);
      const double w = robust_weight(r.norm(), kernel);
      h.noalias() += w * j.transpose() * j;
      b.noalias() += -w * j.transpose() * r;
    }
    bool accepted = false;
    for (int tries = 0; tries < 16 && !accepted; ++tries) {
      Eigen::Matrix<double, 6, 6> hd = h;
      for (int d = 0; d < 6; ++d) hd(d, d) += lambda * std::max(h(d, d), 1e-12);
      const Vec6 delta = hd.ldlt().solve(b);
      if (!delta.allFinite()) {
        lambda *= 4.0;
        continue;
      }
      const Pose candidate = pose.retract(delta);
      const double new_cost = pose_cost(active, k, candidate, kernel);
      if (new_cost < cost) {
        const double rel = (cost - new_cost) / std::max(cost, 1e-300);
        pose = candidate;
        cost = new_cost;
        lambda = std::max(1e-12, lambda / 3.0);
        accepted = true;
        if (rel < tolerance) converged = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) converged = true;  // no improving step left at any damping
  }
  return PoseOnlyResult{pose, cost, converged, it};
}

}  // namespace

PoseOnlyResult optimize_pose_only(const std::vector<PoseObservation>& observations,
                                  const Intrinsics& k, const Pose& initial,
                                  const RobustKernel& kernel, int max_iterations,
                                  double tolerance) {
  std::vector<const PoseObservation*> active;
  active.reserve(observations.size());
  for (const auto& o : observations) active.push_back(&o);
  return pose_lm(active, k, initial, kernel, max_iterations, tolerance);
}

PoseResult optimize_pose(const std::vector<PoseObservation>& observations, const Intrinsics& k,
                         const Pose& initial, const OptimizerConfig& config) {
  if (observations.size() < 6) {
    throw std::invalid_argument("optimize_pose: fewer than 6 observations");
  }
  const RobustKernel& kernel = config.reprojection_kernel;
  const double outlier_gate = 2.0 * kernel.delta;

  PoseResult result;
  result.inliers.assign(observations.size(), 1);
  Pose pose = initial;
  const int rounds = 4;
  const int iters_per_round = std::max(5, config.max_iterations / rounds);
  for (int round = 0; round < rounds; ++round) {
    std::vector<const PoseObservation*> active;
    for (size_t i = 0; i < observations.size(); ++i) {
      if (result.inliers[i]) active.push_back(&observations[i]);
    }
    if (active.size() < 6) break;
    pose = pose_lm(active, k, pose, kernel, iters_per_round, config.tolerance).pose;
    // Reflag against the full observation set; gated observations may return.
    for (size_t i = 0; i < observations.size(); ++i) {
      const double r =
          reprojection_residual(pose, k, observations[i].point, observations[i].pixel).norm();
      result.inliers[i] = r <= outlier_gate ? 1 : 0;
    }
  }

  std::vector<const PoseObservation*> all;
  for (const auto& o : observations) all.push_back(&o);
  if (pose_cost(all, k, pose, kernel) > pose_cost(all, k, initial, kernel)) {
    pose = initial;
    result.status = PoseStatus::diverged;
    for (size_t i = 0; i < observations.size(); ++i) {
      const double r =
          reprojection_residual(pose, k, observations[i].point, observations[i].pixel).norm();
      result.inliers[i] = r <= outlier_gate ? 1 : 0;
    }
  }
  result.pose = pose;
  result.inlier_count = 0;
  for (uint8_t f : result.inliers) result.inlier_count += f;
  return result;
}

// ---------------------------------------------------------------------------
// Bundle adjustment
// ---------------------------------------------------------------------------

namespace {

struct BaWorkspace {
  std::vector<int> pose_slot;   // pose index -> free slot or -1
  std::vector<int> point_slot;  // point index -> free slot or -1
  std::vector<int> free_poses;
  std::vector<int> free_points;
  std::vector<uint8_t> has_shape;  // per point
  std::vector<Vec3> anchors;       // per point, valid where has_shape
};

void validate_problem(const BaProblem& p, const OptimizerConfig& config) {
  const int np = int(p.poses.size());
  const int nl = int(p.points.size());
  if (p.pose_fixed.size() != p.poses.size() || p.point_fixed.size() != p.points.size()) {
    throw std::invalid_argument("bundle_adjust: flag arrays do not match vertex counts");
  }
  bool any_fixed = false;
  for (uint8_t f : p.pose_fixed) any_fixed = any_fixed || f;
  if (!any_fixed) throw std::invalid_argument("bundle_adjust: no fixed pose (gauge)");
  std::vector<int> obs_count(nl, 0);
  for (const auto& e : p.edges) {
    if (e.pose < 0 || e.pose >= np || e.point < 0 || e.point >= nl) {
      throw std::invalid_argument("bundle_adjust: edge references missing vertex");
    }
    ++obs_count[e.point];
  }
  std::vector<uint8_t> shaped(nl, 0);
  const bool shape_active = config.w_shape > 0.0 && !p.shape_points.empty();
  if (!p.shape_points.empty() && p.surface == nullptr) {
    throw std::invalid_argument("bundle_adjust: shape edges without a surface index");
  }
  if (shape_active && config.shape_kernel.kind == RobustKernel::Kind::huber &&
      config.shape_kernel.delta <= 0.0) {
    throw std::invalid_argument("bundle_adjust: shape kernel delta unset (<= 0)");
  }
  for (int idx : p.shape_points) {
    if (idx < 0 || idx >= nl) {
      throw std::invalid_argument("bundle_adjust: shape edge references missing point");
    }
    shaped[idx] = 1;
  }
  for (int j = 0; j < nl; ++j) {
    if (!p.point_fixed[j] && obs_count[j] < 2 && !(shape_active && shaped[j])) {
      throw std::invalid_argument(
          "bundle_adjust: free point observed < 2 times and not shape-constrained");
    }
  }
}

void refresh_anchors(const BaProblem& p, const OptimizerConfig& config, BaWorkspace& ws) {
  if (config.w_shape <= 0.0) return;
  for (int idx : p.shape_points) {
    ws.anchors[idx] = p.surface->closest_point(p.points[idx]).point;
  }
}

double problem_cost(const BaProblem& p, const OptimizerConfig& config, const BaWorkspace& ws,
                    const std::vector<Pose>& poses, const std::vector<Vec3>& points) {
  double cost = 0.0;
  for (const auto& e : p.edges) {
    const Vec2 r = reprojection_residual(poses[e.pose], p.k, points[e.point], e.pixel);
    cost += robust_cost(r.norm(), config.reprojection_kernel);
  }
  if (config.w_shape > 0.0) {
    for (int idx : p.shape_points) {
      const double r = (points[idx] - ws.anchors[idx]).norm();
      cost += config.w_shape * robust_cost(r, config.shape_kernel);
    }
  }
  return cost;
}

}  // namespace

double ba_cost(const BaProblem& problem, const OptimizerConfig& config) {
  BaWorkspace ws;
  ws.anchors.resize(problem.points.size());
  refresh_anchors(problem, config, ws);
  return problem_cost(problem, config, ws, problem.poses, problem.points);
}

BaResult bundle_adjust(BaProblem& problem, const OptimizerConfig& config) {
  validate_problem(problem, config);

  BaWorkspace ws;
  const int np = int(problem.poses.size());
  const int nl = int(problem.points.size());
  ws.pose_slot.assign(np, -1);
  ws.point_slot.assign(nl, -1);
  ws.has_shape.assign(nl, 0);
  ws.anchors.resize(nl);
  for (int i = 0; i < np; ++i) {
    if (!problem.pose_fixed[i]) {
      ws.pose_slot[i] = int(ws.free_poses.size());
      ws.free_poses.push_back(i);
    }
  }
  for (int j = 0; j < nl; ++j) {
    if (!problem.point_fixed[j]) {
      ws.point_slot[j] = int(ws.free_points.size());
      ws.free_points.push_back(j);
    }
  }
  if (config.w_shape > 0.0) {
    for (int idx : problem.shape_points) ws.has_shape[idx] = 1;
  }

  // Edges grouped by point for the Schur elimination.
  std::vector<std::vector<int>> edges_of_point(nl);
  for (int e = 0; e < int(problem.edges.size()); ++e) {
    edges_of_point[problem.edges[e].point].push_back(e);
  }

  const int pose_dim = 6 * int(ws.free_poses.size());
  refresh_anchors(problem, config, ws);
  BaResult result;
  result.initial_cost = problem_cost(problem, config, ws, problem.poses, problem.points);
  double cost = result.initial_cost;
  double lambda = 1e-6;
  int singular_streak = 0;

  using Mat26 = Eigen::Matrix<double, 2, 6>;
  using Mat23 = Eigen::Matrix<double, 2, 3>;
  using Mat63 = Eigen::Matrix<double, 6, 3>;

  for (int it = 0; it < config.max_iterations; ++it) {
    result.iterations = it + 1;
    // Anchors move with the current iterate; moving an anchor to the true
    // closest sample can only lower the shape term.
    refresh_anchors(problem, config, ws);
    cost = problem_cost(problem, config, ws, problem.poses, problem.points);

    // Accumulate block normal equations.
    Eigen::MatrixXd h_pp = Eigen::MatrixXd::Zero(pose_dim, pose_dim);
    Eigen::VectorXd b_p = Eigen::VectorXd::Zero(pose_dim);
    std::vector<Mat3> h_ll(ws.free_points.size(), Mat3::Zero());
    std::vector<Vec3> b_l(ws.free_points.size(), Vec3::Zero());
    // Per-edge pose-point coupling blocks, aligned with problem.edges.
    std::vector<Mat63> w_blocks(problem.edges.size(), Mat63::Zero());

    for (int e = 0; e < int(problem.edges.size()); ++e) {
      const auto& edge = problem.edges[e];
      const int ps = ws.pose_slot[edge.pose];
      const int ls = ws.point_slot[edge.point];
      Mat26 jp;
      Mat23 jl;
      const Vec2 r = reprojection_residual(problem.poses[edge.pose], problem.k,
                                           problem.points[edge.point], edge.pixel,
                                           ps >= 0 ? &jp : nullptr, ls >= 0 ? &jl : nullptr);
      const double w = robust_weight(r.norm(), config.reprojection_kernel);
      if (ps >= 0) {
        h_pp.block<6, 6>(6 * ps, 6 * ps).noalias() += w * jp.transpose() * jp;
        b_p.segment<6>(6 * ps).noalias() += -w * jp.transpose() * r;
      }
      if (ls >= 0) {
        h_ll[ls].noalias() += w * jl.transpose() * jl;
        b_l[ls].noalias() += -w * jl.transpose() * r;
      }
      if (ps >= 0 && ls >= 0) w_blocks[e].noalias() = w * jp.transpose() * jl;
    }
    if (config.w_shape > 0.0) {
      for (int idx : problem.shape_points) {
        const int ls = ws.point_slot[idx];
        if (ls < 0) continue;
        const Vec3 r = problem.points[idx] - ws.anchors[idx];
        const double w = config.w_shape * robust_weight(r.norm(), config.shape_kernel);
        h_ll[ls] += w * Mat3::Identity();
        b_l[ls] += -w * r;
      }
    }

    bool accepted = false;
    for (int tries = 0; tries < 16 && !accepted; ++tries) {
      // Damped copies.
      Eigen::MatrixXd s = h_pp;
      for (int d = 0; d < pose_dim; ++d) s(d, d) += lambda * std::max(h_pp(d, d), 1e-12);
      Eigen::VectorXd rhs = b_p;
      std::vector<Mat3> h_ll_inv(ws.free_points.size());
      bool bad = false;
      for (size_t j = 0; j < ws.free_points.size(); ++j) {
        Mat3 hd = h_ll[j];
        for (int d = 0; d < 3; ++d) hd(d, d) += lambda * std::max(h_ll[j](d, d), 1e-12);
        const double det = hd.determinant();
        if (!(std::abs(det) > 1e-300)) {
          bad = true;
          break;
        }
        h_ll_inv[j] = hd.inverse();
      }
      if (bad) {
        lambda *= 4.0;
        ++singular_streak;
        continue;
      }

      // Schur complement on the point blocks.
      for (int j : ws.free_points) {
        const int ls = ws.point_slot[j];
        const auto& edges = edges_of_point[j];
        const Vec3 hb = h_ll_inv[ls] * b_l[ls];
        for (int ea : edges) {
          const int pa = ws.pose_slot[problem.edges[ea].pose];
          if (pa < 0) continue;
          rhs.segment<6>(6 * pa).noalias() -= w_blocks[ea] * hb;
          const Mat63 wa_hinv = w_blocks[ea] * h_ll_inv[ls];
          for (int eb : edges) {
            const int pb = ws.pose_slot[problem.edges[eb].pose];
            if (pb < 0) continue;
            s.block<6, 6>(6 * pa, 6 * pb).noalias() -= wa_hinv * w_blocks[eb].transpose();
          }
        }
      }

      Eigen::VectorXd delta_p = Eigen::VectorXd::Zero(pose_dim);
      if (pose_dim > 0) {
        delta_p = s.ldlt().solve(rhs);
        if (!delta_p.allFinite()) {
          lambda *= 4.0;
          ++singular_streak;
          continue;
        }
      }

      // Back-substitute the point updates.
      std::vector<Pose> new_poses = problem.poses;
      std::vector<Vec3> new_points = problem.points;
      for (size_t s_idx = 0; s_idx < ws.free_poses.size(); ++s_idx) {
        new_poses[ws.free_poses[s_idx]] =
            problem.poses[ws.free_poses[s_idx]].retract(delta_p.segment<6>(6 * int(s_idx)));
      }
      for (int j : ws.free_points) {
        const int ls = ws.point_slot[j];
        Vec3 acc = b_l[ls];
        for (int ea : edges_of_point[j]) {
          const int pa = ws.pose_slot[problem.edges[ea].pose];
          if (pa < 0) continue;
          acc.noalias() -= w_blocks[ea].transpose() * delta_p.segment<6>(6 * pa);
        }
        new_points[j] = problem.points[j] + h_ll_inv[ls] * acc;
      }

      const double new_cost = problem_cost(problem, config, ws, new_poses, new_points);
      if (std::isfinite(new_cost) && new_cost < cost) {
        singular_streak = 0;
        const double rel = (cost - new_cost) / std::max(cost, 1e-300);
        problem.poses = std::move(new_poses);
        problem.points = std::move(new_points);
        cost = new_cost;
        lambda = std::max(1e-12, lambda / 3.0);
        accepted = true;
        if (rel < config.tolerance) {
          result.final_cost = cost;
          result.status = BaStatus::converged;
          return result;
        }
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) {
      result.final_cost = cost;
      result.status = singular_streak >= 16 ? BaStatus::singular : BaStatus::converged;
      return result;
    }
  }
  result.final_cost = cost;
  result.status = BaStatus::max_iterations;
  return result;
}

// ---------------------------------------------------------------------------
// Plain-text debug serialization
// ---------------------------------------------------------------------------

void BaProblem::save_text(std::ostream& out) const {
  out.precision(17);
  out << "intrinsics " << k.fx << " " << k.fy << " " << k.cx << " " << k.cy << " " << k.width
      << " " << k.height << "\n";
  for (size_t i = 0; i < poses.size(); ++i) {
    out << "pose " << i << " " << int(pose_fixed[i]);
    const auto m = poses[i].to_row_major();
    for (int j = 0; j < 12; ++j) out << " " << m[j];
    out << "\n";
  }
  for (size_t i = 0; i < points.size(); ++i) {
    out << "point " << i << " " << int(point_fixed[i]) << " " << points[i].x() << " "
        << points[i].y() << " " << points[i].z() << "\n";
  }
  for (const auto& e : edges) {
    out << "edge " << e.pose << " " << e.point << " " << e.pixel.x() << " " << e.pixel.y() << "\n";
  }
  for (int idx : shape_points) out << "shape " << idx << "\n";
}

BaProblem BaProblem::load_text(std::istream& in) {
  BaProblem p;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "intrinsics") {
      ss >> p.k.fx >> p.k.fy >> p.k.cx >> p.k.cy >> p.k.width >> p.k.height;
    } else if (tag == "pose") {
      size_t id;
      int fixed;
      Eigen::Matrix<double, 12, 1> m;
      ss >> id >> fixed;
      for (int j = 0; j < 12; ++j) ss >> m[j];
      p.poses.push_back(Pose::from_row_major(m));
      p.pose_fixed.push_back(uint8_t(fixed));
    } else if (tag == "point") {
      size_t id;
      int fixed;
      Vec3 v;
      ss >> id >> fixed >> v.x() >> v.y() >> v.z();
      p.points.push_back(v);
      p.point_fixed.push_back(uint8_t(fixed));
    } else if (tag == "edge") {
      ReprojEdge e;
      ss >> e.pose >> e.point >> e.pixel.x() >> e.pixel.y();
      p.edges.push_back(e);
    } else if (tag == "shape") {
      int idx;
      ss >> idx;
      p.shape_points.push_back(idx);
    }
  }
  return p;
}

}  // namespace mbtrack
