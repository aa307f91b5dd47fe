// Dense surface sampling of a mesh plus an exact KD-tree for closest-point
// queries (the D(.) operator of the shape-prior residual).
#pragma once

#include "mbtrack/mesh.hpp"

#include <cstdint>
#include <vector>

namespace mbtrack {

struct ClosestPoint {
  int sample_id = -1;
  Vec3 point;
  double distance = 0.0;
};

class SurfaceIndex {
 public:
  // Area-weighted uniform sampling at the given density (points per unit
  // area), deterministic for a fixed seed. Throws std::invalid_argument for
  // density <= 0 or an empty mesh.
  SurfaceIndex(const TriangleMesh& mesh, double density, uint64_t seed = 7);

  const std::vector<Vec3>& samples() const { return samples_; }
  double density() const { return density_; }

  // Exact nearest sample; ties broken by the lowest sample id.
  ClosestPoint closest_point(const Vec3& query) const;

  // Mean spacing estimate from density (~ sqrt(1/density)).
  double mean_spacing() const;

 private:
  struct Node {
    // Leaves: [first, first+count) into ids_; internal: split axis/value.
    int left = -1, right = -1;
    int first = 0, count = 0;
    int axis = 0;
    double split = 0.0;
  };

  std::vector<Vec3> samples_;
  std::vector<int> ids_;
  std::vector<Node> nodes_;
  double density_ = 0.0;

  int build(int begin, int end);
  void query(int node, const Vec3& q, int& best_id, double& best_d2) const;
};

/// Builds the default-density index: mean sample spacing <= 0.5% of the mesh
/// bounding-box diagonal.
SurfaceIndex build_default_surface_index(const TriangleMesh& mesh, uint64_t seed = 7);

}  // namespace mbtrack
