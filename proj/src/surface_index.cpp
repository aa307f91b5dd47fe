#include "mbtrack/surface_index.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mbtrack {

SurfaceIndex::SurfaceIndex(const TriangleMesh& mesh, double density, uint64_t seed)
    : density_(density) {
  if (density <= 0.0) throw std::invalid_argument("SurfaceIndex: density must be > 0");
  if (mesh.face_count() == 0) throw std::invalid_argument("SurfaceIndex: empty mesh");

  std::vector<double> cum(mesh.face_count());
  double total = 0.0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    total += mesh.face_area(f);
    cum[f] = total;
  }
  const long n = std::lround(density * total);
  if (n <= 0) throw std::invalid_argument("SurfaceIndex: density too low for mesh area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  samples_.reserve(size_t(n));
  for (long i = 0; i < n; ++i) {
    const double pick = uni(rng) * total;
    const int f = int(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
    // Square-root warp gives uniform barycentrics.
    const double r1 = std::sqrt(uni(rng));
    const double r2 = uni(rng);
    const double a = 1.0 - r1;
    const double b = r1 * (1.0 - r2);
    const double c = r1 * r2;
    samples_.push_back(a * mesh.v0(f) + b * mesh.v1(f) + c * mesh.v2(f));
  }

  ids_.resize(samples_.size());
  for (size_t i = 0; i < ids_.size(); ++i) ids_[i] = int(i);
  nodes_.reserve(2 * samples_.size() / 8 + 1);
  build(0, int(samples_.size()));
}

double SurfaceIndex::mean_spacing() const { return std::sqrt(1.0 / density_); }

int SurfaceIndex::build(int begin, int end) {
  const int node_id = int(nodes_.size());
  nodes_.emplace_back();
  const int count = end - begin;
  if (count <= 16) {
    nodes_[node_id].first = begin;
    nodes_[node_id].count = count;
    return node_id;
  }
  Vec3 lo = samples_[ids_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(samples_[ids_[i]]);
    hi = hi.cwiseMax(samples_[ids_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + count / 2;
  std::nth_element(ids_.begin() + begin, ids_.begin() + mid, ids_.begin() + end,
                   [&](int a, int b) {
                     if (samples_[a][axis] != samples_[b][axis]) {
                       return samples_[a][axis] < samples_[b][axis];
                     }
                     return a < b;
                   });
  nodes_[node_id].axis = axis;
  nodes_[node_id].split = samples_[ids_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[node_id].left = left;
  nodes_[node_id].right = right;
  return node_id;
}

void SurfaceIndex::query(int node_id, const Vec3& q, int& best_id, double& best_d2) const {
  const Node& node = nodes_[node_id];
  if (node.count > 0) {
    for (int i = node.first; i < node.first + node.count; ++i) {
      const int id = ids_[i];
      const double d2 = (samples_[id] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && id < best_id)) {
        best_d2 = d2;
        best_id = id;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int near = diff < 0.0 ? node.left : node.right;
  const int far = diff < 0.0 ? node.right : node.left;
  query(near, q, best_id, best_d2);
  // <= keeps equal-distance candidates visible so the lowest id wins ties.
  if (diff * diff <= best_d2) query(far, q, best_id, best_d2);
}

ClosestPoint SurfaceIndex::closest_point(const Vec3& query_point) const {
  int best_id = int(samples_.size());
  double best_d2 = std::numeric_limits<double>::max();
  query(0, query_point, best_id, best_d2);
  return ClosestPoint{best_id, samples_[best_id], std::sqrt(best_d2)};
}

SurfaceIndex build_default_surface_index(const TriangleMesh& mesh, uint64_t seed) {
  // Anchor-snapping error scales with sample spacing; 0.2% of the bbox
  // diagonal keeps it below the tracking noise floor.
  const double diag = mesh.bbox_diagonal();
  const double spacing = 0.002 * diag;
  const double density = 1.0 / (spacing * spacing);
  return SurfaceIndex(mesh, density, seed);
}

}  // namespace mbtrack
