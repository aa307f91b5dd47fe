#include "mbtrack/geometry.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <random>

using namespace mbtrack;
using namespace mbtrack::testing;

namespace {

const Intrinsics kScope{700.0, 700.0, 480.0, 270.0, 960, 540};

}  // namespace

TEST_CASE("project_point maps the optical axis to the principal point") {
  const auto px = project_point(Pose::identity(), kScope, Vec3{0, 0, 1});
  REQUIRE(px.has_value());
  CHECK(px->x() == doctest::Approx(480.0).epsilon(1e-12));
  CHECK(px->y() == doctest::Approx(270.0).epsilon(1e-12));

  const auto off = project_point(Pose::identity(), kScope, Vec3{1, 0, 1});
  REQUIRE(off.has_value());
  CHECK(off->x() == doctest::Approx(1180.0).epsilon(1e-12));
  CHECK(off->y() == doctest::Approx(270.0).epsilon(1e-12));
}

TEST_CASE("project_point rejects points behind the camera") {
  CHECK_FALSE(project_point(Pose::identity(), kScope, Vec3{0, 0, -1}).has_value());
  CHECK_FALSE(project_point(Pose::identity(), kScope, Vec3{0, 0, 0}).has_value());
}

TEST_CASE("ray_through_pixel: principal point looks down +z") {
  const Ray ray = ray_through_pixel(Pose::identity(), kScope, Vec2{480.0, 270.0});
  CHECK((ray.direction - Vec3{0, 0, 1}).norm() < 1e-12);
  CHECK(ray.origin.norm() < 1e-12);
}

TEST_CASE("ray_through_pixel: ray origin is the camera center in world frame") {
  // Camera placed at (0,0,-5), axis-aligned.
  const Pose pose{Mat3::Identity(), Vec3{0, 0, 5}};
  CHECK((pose.center() - Vec3{0, 0, -5}).norm() < 1e-12);
  const Ray ray = ray_through_pixel(pose, kScope, Vec2{100.0, 200.0});
  CHECK((ray.origin - Vec3{0, 0, -5}).norm() < 1e-12);
}

TEST_CASE("ray_through_pixel round-trips through project_point") {
  Rng rng(7);
  std::uniform_real_distribution<double> ux(0.0, 959.0), uy(0.0, 539.0);
  for (int i = 0; i < 200; ++i) {
    const Pose pose = random_pose(rng, 0.5, 0.3);
    const Vec2 pixel{ux(rng), uy(rng)};
    const Ray ray = ray_through_pixel(pose, kScope, pixel);
    for (double t : {0.5, 2.5, 10.0}) {
      const auto px = project_point(pose, kScope, ray.at(t));
      REQUIRE(px.has_value());
      CHECK((*px - pixel).norm() < 1e-6);
    }
  }
  CHECK_THROWS_AS(ray_through_pixel(Pose::identity(), kScope, Vec2{-1.0, 0.0}),
                  std::out_of_range);
  CHECK_THROWS_AS(ray_through_pixel(Pose::identity(), kScope, Vec2{0.0, 540.0}),
                  std::out_of_range);
}

TEST_CASE("ray_triangle_intersect: axis-aligned plane hit at t = 2") {
  const Ray ray{Vec3{0, 0, 0}, Vec3{0, 0, 1}};
  const auto hit = ray_triangle_intersect(ray, Vec3{-1, -1, 2}, Vec3{1, -1, 2}, Vec3{0, 1, 2});
  REQUIRE(hit.has_value());
  CHECK(hit->t == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("ray_triangle_intersect: parallel ray misses") {
  const Ray ray{Vec3{0, 0, 0}, Vec3{1, 0, 0}};
  CHECK_FALSE(
      ray_triangle_intersect(ray, Vec3{-1, -1, 2}, Vec3{1, -1, 2}, Vec3{0, 1, 2}).has_value());
}

TEST_CASE("ray_triangle_intersect matches the plane/barycentric oracle on 1000 random cases") {
  Rng rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const Ray ray = Ray::through(Vec3{g(rng), g(rng), g(rng)}, random_unit_vec(rng));
    const Vec3 v0{g(rng), g(rng), g(rng)};
    const Vec3 v1{g(rng), g(rng), g(rng)};
    const Vec3 v2{g(rng), g(rng), g(rng)};
    const auto expected = ray_triangle_oracle(ray, v0, v1, v2);
    const auto got = ray_triangle_intersect(ray, v0, v1, v2);
    REQUIRE(got.has_value() == expected.has_value());
    if (got) {
      CHECK(std::abs(got->t - *expected) <= 1e-9);
      ++hits;
    }
  }
  CHECK(hits > 20);  // the random mix must actually exercise the hit path
}

TEST_CASE("triangulate recovers a known point from two noise-free views") {
  const Pose pose_a = Pose::identity();
  const Pose pose_b{Mat3::Identity(), Vec3{-0.1, 0, 0}};  // baseline 0.1
  const Vec3 point{0.05, -0.03, 1.2};
  const auto px_a = project_point(pose_a, kScope, point);
  const auto px_b = project_point(pose_b, kScope, point);
  REQUIRE(px_a);
  REQUIRE(px_b);
  const auto tri = triangulate(pose_a, pose_b, *px_a, *px_b, kScope);
  REQUIRE(tri.has_value());
  CHECK((tri->point - point).norm() < 1e-6);
  CHECK(tri->parallax_deg > 0.5);
}

TEST_CASE("triangulate flags zero parallax") {
  const Pose pose = Pose::identity();
  CHECK_FALSE(triangulate(pose, pose, Vec2{480, 270}, Vec2{480, 270}, kScope).has_value());
}

TEST_CASE("triangulate keeps reprojection residuals near the pixel noise") {
  Rng rng(23);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  int trials = 0;
  for (int i = 0; i < 100; ++i) {
    const Pose pose_a = Pose::identity();
    const Pose pose_b{quat_exp(Vec3{0.0, 0.05, 0.0}), Vec3{-0.12, 0.02, 0.01}};
    const Vec3 point{u(rng), u(rng), 1.0 + 0.3 * u(rng)};
    const auto px_a = project_point(pose_a, kScope, point);
    const auto px_b = project_point(pose_b, kScope, point);
    if (!px_a || !px_b || !kScope.in_bounds(*px_a) || !kScope.in_bounds(*px_b)) continue;
    const Vec2 noisy_a = *px_a + Vec2{noise(rng), noise(rng)};
    const Vec2 noisy_b = *px_b + Vec2{noise(rng), noise(rng)};
    if (!kScope.in_bounds(noisy_a) || !kScope.in_bounds(noisy_b)) continue;
    const auto tri = triangulate(pose_a, pose_b, noisy_a, noisy_b, kScope);
    if (!tri) continue;
    ++trials;
    const auto ra = project_point(pose_a, kScope, tri->point);
    const auto rb = project_point(pose_b, kScope, tri->point);
    REQUIRE(ra);
    REQUIRE(rb);
    CHECK((*ra - noisy_a).norm() <= 3.0);
    CHECK((*rb - noisy_b).norm() <= 3.0);
  }
  CHECK(trials >= 50);
}

TEST_CASE("pose composition is associative and invert is two-sided") {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const Pose ab_c = a.compose(b).compose(c);
    const Pose a_bc = a.compose(b.compose(c));
    CHECK(rotation_angle(ab_c, a_bc) < 1e-9);
    CHECK((ab_c.t - a_bc.t).norm() < 1e-9);

    const Pose left = a.inverse().compose(a);
    const Pose right = a.compose(a.inverse());
    for (const Pose& p : {left, right}) {
      CHECK(rotation_angle(p, Pose::identity()) < 1e-9);
      CHECK(p.t.norm() < 1e-9);
    }
  }
}

TEST_CASE("rotation stays orthonormal through long composition chains") {
  Rng rng(37);
  Pose acc = Pose::identity();
  for (int i = 0; i < 2000; ++i) acc = acc.compose(random_pose(rng, 0.1, 0.01));
  const Mat3 r = acc.rotation();
  CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-9);
  CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("retract matches compose with the exponential for small tangents") {
  Rng rng(41);
  std::normal_distribution<double> g(0.0, 0.1);
  for (int i = 0; i < 50; ++i) {
    const Pose base = random_pose(rng);
    Vec6 delta;
    for (int d = 0; d < 6; ++d) delta[d] = g(rng);
    const Pose via_retract = base.retract(delta);
    const Pose increment{quat_exp(delta.head<3>()), delta.tail<3>()};
    const Pose via_compose = increment.compose(base);
    CHECK(rotation_angle(via_retract, via_compose) < 1e-12);
    CHECK((via_retract.t - via_compose.t).norm() < 1e-12);
  }
}
