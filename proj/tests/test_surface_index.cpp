#include "mbtrack/surface_index.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <random>

using namespace mbtrack;
using namespace mbtrack::testing;

namespace {

TriangleMesh unit_square() {
  TriangleMesh mesh;
  mesh.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  mesh.faces = {{0, 1, 2}, {0, 2, 3}};
  mesh.finalize();
  return mesh;
}

// Linear scan with the documented tie rule: strictly closer wins, equal
// distance keeps the lower id.
ClosestPoint linear_scan(const std::vector<Vec3>& samples, const Vec3& q) {
  ClosestPoint best;
  double best_d2 = std::numeric_limits<double>::max();
  for (int i = 0; i < int(samples.size()); ++i) {
    const double d2 = (samples[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.sample_id = i;
    }
  }
  best.point = samples[best.sample_id];
  best.distance = std::sqrt(best_d2);
  return best;
}

}  // namespace

TEST_CASE("surface sampling: unit square at density 1000") {
  const SurfaceIndex index(unit_square(), 1000.0, 3);
  CHECK(int(index.samples().size()) == 1000);  // area exactly 1
  for (const Vec3& s : index.samples()) {
    CHECK(s.z() == 0.0);
    CHECK(s.x() >= 0.0);
    CHECK(s.x() <= 1.0);
    CHECK(s.y() >= 0.0);
    CHECK(s.y() <= 1.0);
  }
}

TEST_CASE("surface sampling: count scales linearly with density") {
  const SurfaceIndex a(unit_square(), 1000.0, 3);
  const SurfaceIndex b(unit_square(), 2000.0, 3);
  CHECK(double(b.samples().size()) ==
        doctest::Approx(2.0 * double(a.samples().size())).epsilon(0.05));
}

TEST_CASE("surface sampling: sphere centroid near the origin") {
  const TriangleMesh sphere = make_icosphere(3, 1.0);
  const SurfaceIndex index(sphere, 2000.0, 9);
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& s : index.samples()) centroid += s;
  centroid /= double(index.samples().size());
  CHECK(centroid.norm() < 0.05);
}

TEST_CASE("closest_point: query at a sample returns it with distance 0") {
  const SurfaceIndex index(unit_square(), 500.0, 5);
  const Vec3 q = index.samples()[123];
  const ClosestPoint cp = index.closest_point(q);
  CHECK(cp.sample_id == 123);
  CHECK(cp.distance == 0.0);
}

TEST_CASE("closest_point: pole query against a dense unit sphere") {
  const TriangleMesh sphere = make_icosphere(4, 1.0);
  const SurfaceIndex index(sphere, 50000.0 / sphere.surface_area(), 13);
  const double spacing = index.mean_spacing();
  const ClosestPoint cp = index.closest_point(Vec3{0, 0, 2});
  CHECK((cp.point - Vec3{0, 0, 1}).norm() < 2.0 * spacing);
  CHECK(std::abs(cp.distance - 1.0) < 2.0 * spacing);
}

TEST_CASE("closest_point: identical to the linear-scan oracle on 10k queries") {
  const TriangleMesh sphere = make_icosphere(3, 1.0);
  const SurfaceIndex index(sphere, 30000.0 / sphere.surface_area(), 17);
  Rng rng(19);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 q{u(rng), u(rng), u(rng)};
    const ClosestPoint got = index.closest_point(q);
    const ClosestPoint expected = linear_scan(index.samples(), q);
    REQUIRE(got.sample_id == expected.sample_id);
    REQUIRE(got.distance == expected.distance);
  }
}

TEST_CASE("surface index rejects bad densities") {
  CHECK_THROWS_AS(SurfaceIndex(unit_square(), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(SurfaceIndex(unit_square(), -5.0), std::invalid_argument);
}

TEST_CASE("default surface density keeps spacing under 0.5% of the bbox diagonal") {
  const TriangleMesh sphere = make_icosphere(3, 0.04);
  const SurfaceIndex index = build_default_surface_index(sphere);
  CHECK(index.mean_spacing() <= 0.005 * sphere.bbox_diagonal() + 1e-12);
}
