#include "mbtrack/optimizer.hpp"

#include "ba_reference.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace mbtrack;
using namespace mbtrack::testing;

namespace {

const Intrinsics kCam{500.0, 500.0, 320.0, 240.0, 640, 480};

struct TwoViewProblem {
  BaProblem problem;
  std::vector<Pose> true_poses;
  std::vector<Vec3> true_points;
};

TwoViewProblem make_two_view_problem(uint64_t seed, double pixel_noise, double point_perturb,
                                     double pose_perturb) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  TwoViewProblem out;
  BaProblem& p = out.problem;
  p.k = kCam;
  const Pose pose_a = Pose::identity();
  Pose pose_b{quat_exp(Vec3{0.02 * u(rng), 0.05 + 0.02 * u(rng), 0.02 * u(rng)}),
              Vec3{-0.4 + 0.1 * u(rng), 0.05 * u(rng), 0.05 * u(rng)}};
  out.true_poses = {pose_a, pose_b};

  for (int i = 0; i < 50; ++i) {
    out.true_points.push_back(Vec3{1.2 * u(rng), 1.0 * u(rng), 3.0 + u(rng)});
  }

  p.poses = out.true_poses;
  p.pose_fixed = {1, 0};
  for (int j = 0; j < 50; ++j) {
    const Vec3& pt = out.true_points[j];
    for (int i = 0; i < 2; ++i) {
      auto px = project_point(out.true_poses[i], kCam, pt);
      REQUIRE(px.has_value());
      p.edges.push_back({i, j, *px + pixel_noise * Vec2{g(rng), g(rng)}});
    }
    p.points.push_back(pt + point_perturb * Vec3{g(rng), g(rng), g(rng)});
    p.point_fixed.push_back(0);
  }
  Vec6 delta;
  for (int d = 0; d < 3; ++d) delta[d] = 0.02 * pose_perturb * g(rng);
  for (int d = 3; d < 6; ++d) delta[d] = pose_perturb * g(rng);
  p.poses[1] = p.poses[1].retract(delta);
  return out;
}

}  // namespace

TEST_CASE("robust_cost: huber values at, below and beyond the elbow") {
  const RobustKernel h = RobustKernel::huber(3.0);
  CHECK(robust_cost(0.0, h) == 0.0);
  CHECK(robust_cost(3.0, h) == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(robust_cost(5.0, h) == doctest::Approx(21.0).epsilon(1e-12));  // 3 * (10 - 3)
  CHECK(robust_cost(2.0, RobustKernel::none()) == 4.0);
  // Continuity and weight behavior at the elbow.
  CHECK(robust_cost(3.0 + 1e-12, h) == doctest::Approx(9.0).epsilon(1e-9));
  CHECK(robust_weight(1.0, h) == 1.0);
  CHECK(robust_weight(6.0, h) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("analytic reprojection Jacobians match central differences") {
  Rng rng(1234);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Pose pose = random_pose(rng, 0.6, 0.4);
    Vec3 point{2.0 * u(rng), 2.0 * u(rng), 3.0 + 1.5 * u(rng)};
    // Keep the point safely in front of the camera.
    if (pose.apply(point).z() < 0.5) {
      point = pose.inverse().apply(Vec3{u(rng), u(rng), 2.0 + u(rng)});
    }
    const Vec2 pixel{320.0 + 100.0 * u(rng), 240.0 + 100.0 * u(rng)};

    Eigen::Matrix<double, 2, 6> ja_pose, jn_pose;
    Eigen::Matrix<double, 2, 3> ja_point, jn_point;
    reprojection_residual(pose, kCam, point, pixel, &ja_pose, &ja_point);
    numeric_reprojection_jacobians(pose, kCam, point, pixel, jn_pose, jn_point);

    CHECK((ja_pose - jn_pose).norm() / std::max(1.0, ja_pose.norm()) < 1e-4);
    CHECK((ja_point - jn_point).norm() / std::max(1.0, ja_point.norm()) < 1e-4);
  }
}

TEST_CASE("shape residual Jacobian matches central differences") {
  Rng rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 point{g(rng), g(rng), g(rng)};
    const Vec3 anchor{g(rng), g(rng), g(rng)};
    Mat3 ja;
    shape_residual(point, anchor, &ja);
    Mat3 jn;
    const double step = 1e-6;
    for (int c = 0; c < 3; ++c) {
      Vec3 d = Vec3::Zero();
      d[c] = step;
      jn.col(c) = (shape_residual(point + d, anchor) - shape_residual(point - d, anchor)) /
                  (2.0 * step);
    }
    CHECK((ja - jn).norm() / std::max(1.0, ja.norm()) < 1e-4);
  }
}

TEST_CASE("optimize_pose recovers a perturbed pose from noise-free observations") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Pose truth{quat_exp(Vec3{0.1, -0.2, 0.05}), Vec3{0.1, -0.05, 0.2}};
  std::vector<PoseObservation> obs;
  for (int i = 0; i < 100; ++i) {
    const Vec3 pt{1.5 * u(rng), 1.2 * u(rng), 3.0 + u(rng)};
    const auto px = project_point(truth, kCam, pt);
    if (!px) continue;
    obs.push_back({pt, *px});
  }
  // 2 degrees rotation, ~2% depth translation.
  const Pose initial = truth.retract((Vec6() << 0.02, 0.025, -0.01, 0.03, -0.02, 0.06).finished());
  OptimizerConfig cfg;
  const PoseResult result = optimize_pose(obs, kCam, initial, cfg);
  CHECK(rotation_angle(result.pose, truth) < 1e-6);
  CHECK((result.pose.t - truth.t).norm() < 1e-6);
  CHECK(result.inlier_count == int(obs.size()));
  CHECK(result.status == PoseStatus::ok);
}

TEST_CASE("optimize_pose flags gross outliers and stays accurate") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> upx(0.0, 639.0), upy(0.0, 479.0);
    const Pose truth{quat_exp(Vec3{0.05 * u(rng), 0.1 * u(rng), 0.05 * u(rng)}),
                     Vec3{0.2 * u(rng), 0.2 * u(rng), 0.1 * u(rng)}};
    std::vector<PoseObservation> obs;
    std::vector<bool> is_outlier;
    for (int i = 0; i < 100; ++i) {
      const Vec3 pt{1.5 * u(rng), 1.2 * u(rng), 3.0 + u(rng)};
      const auto px = project_point(truth, kCam, pt);
      if (!px) continue;
      const bool outlier = int(obs.size()) % 5 == 0;  // 20%
      obs.push_back({pt, outlier ? Vec2{upx(rng), upy(rng)} : *px});
      is_outlier.push_back(outlier);
    }
    const Pose initial = truth.retract((Vec6() << 0.01, -0.01, 0.01, 0.02, 0.01, -0.02).finished());
    OptimizerConfig cfg;
    const PoseResult result = optimize_pose(obs, kCam, initial, cfg);
    CHECK(rotation_angle(result.pose, truth) < 0.2 * M_PI / 180.0);
    for (size_t i = 0; i < obs.size(); ++i) {
      if (is_outlier[i]) {
        // A uniform-random pixel lies > 6 px from the projection almost
        // surely; every such observation must be flagged.
        const double r = reprojection_residual(result.pose, kCam, obs[i].point, obs[i].pixel).norm();
        if (r > 6.0) CHECK(result.inliers[i] == 0);
      } else {
        CHECK(result.inliers[i] == 1);
      }
    }
  }
}

TEST_CASE("optimize_pose rejects fewer than 6 observations") {
  std::vector<PoseObservation> obs(5, PoseObservation{Vec3{0, 0, 2}, Vec2{320, 240}});
  OptimizerConfig cfg;
  CHECK_THROWS_AS(optimize_pose(obs, kCam, Pose::identity(), cfg), std::invalid_argument);
}

TEST_CASE("bundle_adjust: stationary at the noise-free ground truth") {
  TwoViewProblem tv = make_two_view_problem(3, 0.0, 0.0, 0.0);
  const std::vector<Pose> poses_before = tv.problem.poses;
  const std::vector<Vec3> points_before = tv.problem.points;
  OptimizerConfig cfg;
  cfg.w_shape = 0.0;
  cfg.reprojection_kernel = RobustKernel::none();
  const BaResult result = bundle_adjust(tv.problem, cfg);
  CHECK(result.final_cost <= result.initial_cost);
  CHECK(result.initial_cost < 1e-18);
  for (size_t i = 0; i < poses_before.size(); ++i) {
    CHECK(rotation_angle(tv.problem.poses[i], poses_before[i]) < 1e-9);
    CHECK((tv.problem.poses[i].t - poses_before[i].t).norm() < 1e-9);
  }
  for (size_t j = 0; j < points_before.size(); ++j) {
    CHECK((tv.problem.points[j] - points_before[j]).norm() < 1e-9);
  }
}

TEST_CASE("bundle_adjust: gauge pose is bit-identical after optimization") {
  TwoViewProblem tv = make_two_view_problem(9, 1.0, 0.05, 0.02);
  const Pose fixed_before = tv.problem.poses[0];
  OptimizerConfig cfg;
  cfg.w_shape = 0.0;
  bundle_adjust(tv.problem, cfg);
  CHECK(tv.problem.poses[0].q.coeffs() == fixed_before.q.coeffs());
  CHECK(tv.problem.poses[0].t == fixed_before.t);
}

TEST_CASE("bundle_adjust matches the dense numeric-Jacobian reference") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    TwoViewProblem tv = make_two_view_problem(seed, 1.0, 0.05, 0.02);
    BaProblem dense_copy = tv.problem;

    OptimizerConfig cfg;
    cfg.w_shape = 0.0;
    cfg.reprojection_kernel = RobustKernel::none();
    cfg.max_iterations = 200;
    cfg.tolerance = 1e-14;
    const BaResult blocked = bundle_adjust(tv.problem, cfg);
    const DenseBaResult dense = dense_reference_ba(std::move(dense_copy));

    CHECK(blocked.initial_cost == doctest::Approx(dense.initial_cost).epsilon(1e-12));
    CHECK(blocked.final_cost ==
          doctest::Approx(dense.final_cost).epsilon(1e-8));
  }
}

TEST_CASE("bundle_adjust: shape prior halves the point-to-surface distance") {
  const TriangleMesh sphere = make_icosphere(3, 1.0);
  const SurfaceIndex surface(sphere, 200000.0 / sphere.surface_area(), 4);
  const Intrinsics k{700.0, 700.0, 320.0, 240.0, 640, 480};

  int wins = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);

    // Two narrow-baseline cameras looking at the sphere from z = -3: depth is
    // weakly observable, which is where the prior earns its keep.
    BaProblem base;
    base.k = k;
    base.poses = {Pose{Mat3::Identity(), Vec3{0, 0, 3.0}},
                  Pose{quat_exp(Vec3{0.0, 0.005, 0.0}), Vec3{-0.02, 0.0, 3.0}}};
    base.pose_fixed = {1, 1};  // pure point refinement
    std::vector<Vec3> truth;
    for (int i = 0; i < 50; ++i) {
      Vec3 dir{0.4 * g(rng), 0.4 * g(rng), -1.0};
      truth.push_back(dir.normalized());  // camera-facing hemisphere
    }
    for (int j = 0; j < int(truth.size()); ++j) {
      for (int i = 0; i < 2; ++i) {
        const auto px = project_point(base.poses[i], k, truth[j]);
        REQUIRE(px.has_value());
        base.edges.push_back({i, j, *px + Vec2{g(rng), g(rng)}});  // sigma = 1 px
      }
      base.points.push_back(truth[j] + 0.01 * Vec3{g(rng), g(rng), g(rng)});
      base.point_fixed.push_back(0);
      base.shape_points.push_back(j);
    }
    base.surface = &surface;

    auto mean_surface_distance = [&](const BaProblem& p) {
      double sum = 0.0;
      for (const Vec3& pt : p.points) sum += surface.closest_point(pt).distance;
      return sum / double(p.points.size());
    };

    OptimizerConfig with_prior;
    with_prior.w_shape = 100.0;
    with_prior.shape_kernel = RobustKernel::huber(2.0);  // quadratic over this range
    with_prior.reprojection_kernel = RobustKernel::none();
    with_prior.max_iterations = 100;
    OptimizerConfig without_prior = with_prior;
    without_prior.w_shape = 0.0;

    BaProblem p_with = base;
    BaProblem p_without = base;
    bundle_adjust(p_with, with_prior);
    bundle_adjust(p_without, without_prior);
    if (mean_surface_distance(p_with) < 0.5 * mean_surface_distance(p_without)) ++wins;
  }
  CHECK(wins == 10);
}

TEST_CASE("bundle_adjust validates its preconditions") {
  BaProblem p;
  p.k = kCam;
  p.poses = {Pose::identity()};
  p.pose_fixed = {0};  // no gauge
  p.points = {Vec3{0, 0, 2}};
  p.point_fixed = {0};
  p.edges = {{0, 0, Vec2{320, 240}}, {0, 0, Vec2{321, 240}}};
  OptimizerConfig cfg;
  cfg.w_shape = 0.0;
  CHECK_THROWS_AS(bundle_adjust(p, cfg), std::invalid_argument);
  p.pose_fixed = {1};
  CHECK_NOTHROW(bundle_adjust(p, cfg));

  BaProblem q = p;
  q.edges = {{0, 0, Vec2{320, 240}}};  // single observation, no shape
  CHECK_THROWS_AS(bundle_adjust(q, cfg), std::invalid_argument);
  q.point_fixed = {1};
  CHECK_NOTHROW(bundle_adjust(q, cfg));
}

TEST_CASE("BaProblem text serialization round-trips") {
  TwoViewProblem tv = make_two_view_problem(13, 0.5, 0.02, 0.01);
  tv.problem.shape_points = {3, 7};
  std::stringstream ss;
  tv.problem.save_text(ss);
  const BaProblem loaded = BaProblem::load_text(ss);
  REQUIRE(loaded.poses.size() == tv.problem.poses.size());
  REQUIRE(loaded.points.size() == tv.problem.points.size());
  REQUIRE(loaded.edges.size() == tv.problem.edges.size());
  CHECK(loaded.shape_points == tv.problem.shape_points);
  for (size_t i = 0; i < loaded.poses.size(); ++i) {
    CHECK(rotation_angle(loaded.poses[i], tv.problem.poses[i]) < 1e-12);
    CHECK((loaded.poses[i].t - tv.problem.poses[i].t).norm() < 1e-12);
  }
  for (size_t e = 0; e < loaded.edges.size(); ++e) {
    CHECK(loaded.edges[e].pixel == tv.problem.edges[e].pixel);
  }
}

TEST_CASE("optimize_pose_only is a fixed point at its own optimum") {
  TwoViewProblem tv = make_two_view_problem(21, 0.5, 0.0, 0.0);
  std::vector<PoseObservation> obs;
  for (const auto& e : tv.problem.edges) {
    if (e.pose == 1) obs.push_back({tv.problem.points[e.point], e.pixel});
  }
  const auto first = optimize_pose_only(obs, kCam, tv.problem.poses[1], RobustKernel::huber(3.0));
  const auto second = optimize_pose_only(obs, kCam, first.pose, RobustKernel::huber(3.0));
  CHECK(rotation_angle(first.pose, second.pose) < 1e-10);
  CHECK((first.pose.t - second.pose.t).norm() < 1e-10);
}
