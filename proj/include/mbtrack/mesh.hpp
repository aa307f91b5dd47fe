// Triangle mesh with per-face normal/color/texturing weight, loaders for
// ASCII OBJ/PLY, textured PLY export, procedural builders and a BVH for
// ray casting.
#pragma once

#include "mbtrack/geometry.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace mbtrack {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec3> face_normals;   // unit, from CCW winding
  std::vector<Vec3> face_colors;    // RGB in [0,255]
  std::vector<double> face_weights; // texturing weights in [0,10]

  int face_count() const { return int(faces.size()); }
  int vertex_count() const { return int(vertices.size()); }

  const Vec3& v0(int f) const { return vertices[faces[f][0]]; }
  const Vec3& v1(int f) const { return vertices[faces[f][1]]; }
  const Vec3& v2(int f) const { return vertices[faces[f][2]]; }

  double face_area(int f) const {
    return 0.5 * (v1(f) - v0(f)).cross(v2(f) - v0(f)).norm();
  }
  double surface_area() const;
  Vec3 centroid() const;           // area-weighted centroid of face centers
  double bbox_diagonal() const;

  // Drops degenerate faces (area <= 1e-12), recomputes normals from winding,
  // resets colors to mid-gray and weights to zero where sizes changed.
  // Returns the number of dropped faces.
  int finalize();
};

struct LoadReport {
  int dropped_degenerate = 0;
};

/// Loads an ASCII OBJ (v/f records) or ASCII PLY mesh, by extension.
/// Throws std::runtime_error carrying the path and the failing line number.
TriangleMesh load_mesh(const std::string& path, LoadReport* report = nullptr);

/// Writes an ASCII PLY with per-face uchar RGB (the textured-mesh format).
void save_mesh_ply(const TriangleMesh& mesh, const std::string& path);

// Procedural shapes used by fixtures and the simulator.
TriangleMesh make_icosphere(int subdivisions, double radius = 1.0);
TriangleMesh make_ellipsoid(int subdivisions, const Vec3& radii);
// Ellipsoid with smooth seeded radial bumps (relative amplitude).
TriangleMesh make_bumpy_ellipsoid(int subdivisions, const Vec3& radii,
                                  double bump_amplitude, uint64_t seed);

/// Axis-aligned-box BVH over mesh triangles for nearest ray hits.
class MeshBvh {
 public:
  explicit MeshBvh(const TriangleMesh& mesh);

  struct Hit {
    int face = -1;
    double t = 0.0;
    Vec2 barycentric;
  };
  // Nearest front-of-origin intersection, identical to testing every face.
  std::optional<Hit> intersect(const Ray& ray) const;

 private:
  struct Node {
    Vec3 bb_min, bb_max;
    int left = -1, right = -1;  // internal children
    int first = 0, count = 0;   // leaf triangle range
  };
  const TriangleMesh& mesh_;
  std::vector<Node> nodes_;
  std::vector<int> order_;  // triangle indices grouped by leaf

  int build(std::vector<int>& tris, int begin, int end, std::vector<Vec3>& centers);
};

}  // namespace mbtrack
