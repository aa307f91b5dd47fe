#include "mbtrack/raster.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <random>

using namespace mbtrack;
using namespace mbtrack::testing;

namespace {

// Wide enough that the test sphere's silhouette disk fits fully inside.
const Intrinsics kWide{700.0, 700.0, 640.0, 512.0, 1280, 1024};

TriangleMesh sphere_at_z2(int subdiv = 4) {
  TriangleMesh mesh = make_icosphere(subdiv, 1.0);
  for (Vec3& v : mesh.vertices) v.z() += 2.0;
  mesh.finalize();
  return mesh;
}

}  // namespace

TEST_CASE("render_mask: mesh entirely behind the camera gives an empty mask") {
  TriangleMesh mesh = make_icosphere(2, 1.0);
  for (Vec3& v : mesh.vertices) v.z() -= 5.0;
  mesh.finalize();
  const BinaryMask mask = render_mask(mesh, Pose::identity(), kWide, 0);
  CHECK(mask.count() == 0);
}

TEST_CASE("render_mask: unit sphere silhouette matches the analytic disk area") {
  // Silhouette radius f * r / sqrt(d^2 - r^2) = 700 / sqrt(3) ~ 404.1 px.
  const TriangleMesh mesh = sphere_at_z2();
  const BinaryMask mask = render_mask(mesh, Pose::identity(), kWide, 0);
  const double radius = 700.0 / std::sqrt(3.0);
  const double disk_area = M_PI * radius * radius;
  CHECK(double(mask.count()) == doctest::Approx(disk_area).epsilon(0.02));
}

TEST_CASE("render_mask: dilation produces a strict superset") {
  const TriangleMesh mesh = sphere_at_z2(2);
  const BinaryMask base = render_mask(mesh, Pose::identity(), kWide, 0);
  const BinaryMask dilated = render_mask(mesh, Pose::identity(), kWide, 5);
  REQUIRE(base.count() > 0);
  for (int y = 0; y < base.height; ++y) {
    for (int x = 0; x < base.width; ++x) {
      if (base.at(x, y)) REQUIRE(dilated.at(x, y));
    }
  }
  CHECK(dilated.count() > base.count());
}

TEST_CASE("dilate: square structuring element reaches Chebyshev distance r") {
  BinaryMask mask(21, 21);
  mask.set(10, 10);
  const BinaryMask d = dilate(mask, 3);
  for (int y = 0; y < 21; ++y) {
    for (int x = 0; x < 21; ++x) {
      const bool expect = std::max(std::abs(x - 10), std::abs(y - 10)) <= 3;
      REQUIRE(d.at(x, y) == expect);
    }
  }
}

TEST_CASE("render_depth: center pixel of the sphere reads depth 1") {
  const TriangleMesh mesh = sphere_at_z2();
  const auto depths =
      render_depth(mesh, Pose::identity(), kWide, {Vec2{640.0, 512.0}, Vec2{10.0, 10.0}});
  REQUIRE(depths[0].has_value());
  CHECK(*depths[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_FALSE(depths[1].has_value());  // outside the silhouette
}

TEST_CASE("render_depth: equals brute-force minimum over all triangles") {
  const TriangleMesh mesh = sphere_at_z2(3);
  const Pose pose = Pose::identity();
  Rng rng(3);
  std::uniform_real_distribution<double> ur(0.0, 1.0);
  const double radius = 700.0 / std::sqrt(3.0);
  std::vector<Vec2> pixels;
  while (pixels.size() < 500) {
    // Random pixels inside the silhouette disk.
    const double ang = 2.0 * M_PI * ur(rng);
    const double rr = radius * 0.98 * std::sqrt(ur(rng));
    pixels.push_back(Vec2{640.0 + rr * std::cos(ang), 512.0 + rr * std::sin(ang)});
  }
  const auto depths = render_depth(mesh, pose, kWide, pixels);
  for (size_t i = 0; i < pixels.size(); ++i) {
    const Ray ray = ray_through_pixel(pose, kWide, pixels[i]);
    std::optional<double> brute_t;
    for (int f = 0; f < mesh.face_count(); ++f) {
      const auto hit = ray_triangle_intersect(ray, mesh.v0(f), mesh.v1(f), mesh.v2(f));
      if (hit && (!brute_t || hit->t < *brute_t)) brute_t = hit->t;
    }
    REQUIRE(depths[i].has_value() == brute_t.has_value());
    if (depths[i]) {
      const double expected = pose.apply(ray.at(*brute_t)).z();
      REQUIRE(*depths[i] == expected);
    }
  }
}

TEST_CASE("render_depth hit set matches the undilated mask up to a 1-px band") {
  const TriangleMesh mesh = sphere_at_z2(3);
  const BinaryMask mask = render_mask(mesh, Pose::identity(), kWide, 0);
  const BinaryMask grown = dilate(mask, 1);
  BinaryMask interior(mask.width, mask.height);
  for (int y = 1; y < mask.height - 1; ++y) {
    for (int x = 1; x < mask.width - 1; ++x) {
      bool all = true;
      for (int dy = -1; dy <= 1 && all; ++dy) {
        for (int dx = -1; dx <= 1 && all; ++dx) all = mask.at(x + dx, y + dy);
      }
      if (all) interior.set(x, y);
    }
  }
  Rng rng(77);
  std::uniform_int_distribution<int> ux(0, mask.width - 1), uy(0, mask.height - 1);
  int checked = 0;
  for (int i = 0; i < 4000; ++i) {
    const int x = ux(rng), y = uy(rng);
    const Vec2 px{x + 0.5, y + 0.5};
    const auto depth = render_depth(mesh, Pose::identity(), kWide, {px})[0];
    if (depth.has_value()) {
      REQUIRE(grown.at(x, y));  // hits stay within the 1-px grown mask
    } else {
      REQUIRE_FALSE(interior.at(x, y));  // interior mask pixels must hit
    }
    ++checked;
  }
  CHECK(checked == 4000);
}

TEST_CASE("texture_update: recurrence, back-face test and weight saturation") {
  TriangleMesh mesh;
  mesh.vertices = {{-0.1, -0.1, 1.0}, {0.1, -0.1, 1.0}, {0.0, 0.1, 1.0}};
  mesh.faces = {{0, 2, 1}};  // wound so the normal points back at the camera
  mesh.finalize();
  REQUIRE(mesh.face_normals[0].z() < 0.0);

  const Intrinsics k{700.0, 700.0, 480.0, 270.0, 960, 540};
  const ImageRGB white(960, 540, 255, 255, 255);

  SUBCASE("first update adopts the mean color exactly") {
    texture_update(mesh, Pose::identity(), white, k);
    CHECK((mesh.face_colors[0] - Vec3{255, 255, 255}).norm() < 1e-12);
    CHECK(mesh.face_weights[0] == 1.0);
  }

  SUBCASE("back-facing face untouched") {
    std::swap(mesh.faces[0][1], mesh.faces[0][2]);
    mesh.finalize();
    REQUIRE(mesh.face_normals[0].z() > 0.0);
    const Vec3 before = mesh.face_colors[0];
    texture_update(mesh, Pose::identity(), white, k);
    CHECK((mesh.face_colors[0] - before).norm() == 0.0);
    CHECK(mesh.face_weights[0] == 0.0);
  }

  SUBCASE("two updates average the two colors") {
    const ImageRGB a(960, 540, 100, 60, 20);
    const ImageRGB b(960, 540, 200, 160, 120);
    texture_update(mesh, Pose::identity(), a, k);
    texture_update(mesh, Pose::identity(), b, k);
    CHECK((mesh.face_colors[0] - Vec3{150, 110, 70}).norm() < 1e-9);
    CHECK(mesh.face_weights[0] == 2.0);
  }

  SUBCASE("weights saturate at 10 and the blend factor floors at 1/11") {
    const ImageRGB a(960, 540, 110, 110, 110);
    for (int i = 0; i < 11; ++i) texture_update(mesh, Pose::identity(), a, k);
    CHECK(mesh.face_weights[0] == 10.0);
    CHECK((mesh.face_colors[0] - Vec3{110, 110, 110}).norm() < 1e-9);
    const ImageRGB b(960, 540, 0, 0, 0);
    texture_update(mesh, Pose::identity(), b, k);  // 12th update
    CHECK(mesh.face_weights[0] == 10.0);
    CHECK((mesh.face_colors[0] - Vec3{110, 110, 110} * (10.0 / 11.0)).norm() < 1e-9);
  }
}

TEST_CASE("texture_update leaves geometry alone and keeps weights bounded") {
  TriangleMesh mesh = sphere_at_z2(2);
  const auto vertices = mesh.vertices;
  const auto faces = mesh.faces;
  const Intrinsics k{700.0, 700.0, 640.0, 512.0, 1280, 1024};
  const ImageRGB img(1280, 1024, 90, 120, 150);
  std::vector<double> prev_weights = mesh.face_weights;
  for (int i = 0; i < 13; ++i) {
    texture_update(mesh, Pose::identity(), img, k);
    for (int f = 0; f < mesh.face_count(); ++f) {
      CHECK(mesh.face_weights[f] >= prev_weights[f]);
      CHECK(mesh.face_weights[f] <= 10.0);
    }
    prev_weights = mesh.face_weights;
  }
  CHECK(mesh.vertices == vertices);
  CHECK(mesh.faces == faces);
}

TEST_CASE("clip_triangle_near handles straddling triangles") {
  const Vec3 in[3] = {Vec3{0, 0, 1.0}, Vec3{0, 1, 1.0}, Vec3{0, 0, -1.0}};
  Vec3 out[2][3];
  const int n = clip_triangle_near(in, out);
  CHECK(n == 2);  // one vertex behind -> quad -> two triangles
  for (int i = 0; i < n; ++i) {
    for (int v = 0; v < 3; ++v) CHECK(out[i][v].z() >= kNearClip - 1e-15);
  }
  const Vec3 all_behind[3] = {Vec3{0, 0, -1}, Vec3{1, 0, -1}, Vec3{0, 1, -2}};
  CHECK(clip_triangle_near(all_behind, out) == 0);
}
