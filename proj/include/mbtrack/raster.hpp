// CPU rasterization of the prior mesh: silhouette masks, per-pixel simulated
// depth, and weighted face texturing.
#pragma once

#include "mbtrack/geometry.hpp"
#include "mbtrack/image.hpp"
#include "mbtrack/mesh.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace mbtrack {

struct BinaryMask {
  int width = 0, height = 0;
  std::vector<uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h, bool value = false)
      : width(w), height(h), bits(size_t(w) * h, value ? 1 : 0) {}

  bool at(int x, int y) const { return bits[size_t(y) * width + x] != 0; }
  void set(int x, int y) { bits[size_t(y) * width + x] = 1; }
  bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  // Pixel test for a continuous coordinate; false outside the image.
  bool covers(const Vec2& px) const;
  size_t count() const;
  double coverage() const { return bits.empty() ? 0.0 : double(count()) / double(bits.size()); }
};

/// Square dilation by radius_px (no-op for radius 0).
BinaryMask dilate(const BinaryMask& mask, int radius_px);

// Camera-frame triangles are clipped against z = kNearClip before projection.
inline constexpr double kNearClip = 1e-6;

/// Union of the projected footprints of all faces, then dilated. Faces fully
/// behind the camera contribute nothing.
BinaryMask render_mask(const TriangleMesh& mesh, const Pose& pose, const Intrinsics& k,
                       int dilation_px);

/// Per-pixel camera-frame depth of the nearest ray-triangle hit (nullopt on
/// miss). Pixels must be in bounds.
std::vector<std::optional<double>> render_depth(const TriangleMesh& mesh, const Pose& pose,
                                                const Intrinsics& k,
                                                const std::vector<Vec2>& pixels);

/// Same, reusing a prebuilt BVH.
std::vector<std::optional<double>> render_depth(const TriangleMesh& mesh, const MeshBvh& bvh,
                                                const Pose& pose, const Intrinsics& k,
                                                const std::vector<Vec2>& pixels);

/// One texturing pass: every face passing the back-face test ((R*n).z < 0)
/// and covering at least one pixel gets its color blended with the mean image
/// color of its footprint; weights saturate at 10.
void texture_update(TriangleMesh& mesh, const Pose& pose, const ImageRGB& image,
                    const Intrinsics& k);

inline constexpr double kMaxTextureWeight = 10.0;

// Rasterizes the triangle (continuous pixel coordinates) over integer pixels
// whose centers it covers, top-left fill convention, clipped to width/height.
template <typename EmitFn>
void rasterize_triangle(Vec2 a, Vec2 b, Vec2 c, int width, int height, EmitFn&& emit) {
  auto edge = [](const Vec2& p, const Vec2& q, double x, double y) {
    return (q.x() - p.x()) * (y - p.y()) - (q.y() - p.y()) * (x - p.x());
  };
  const double area2 = edge(a, b, c.x(), c.y());
  if (area2 == 0.0) return;
  if (area2 < 0.0) std::swap(b, c);

  auto top_left = [](const Vec2& p, const Vec2& q) {
    const double dx = q.x() - p.x(), dy = q.y() - p.y();
    return (dy == 0.0 && dx > 0.0) || dy < 0.0;
  };
  const bool tl0 = top_left(a, b), tl1 = top_left(b, c), tl2 = top_left(c, a);

  const double min_x = std::min({a.x(), b.x(), c.x()});
  const double max_x = std::max({a.x(), b.x(), c.x()});
  const double min_y = std::min({a.y(), b.y(), c.y()});
  const double max_y = std::max({a.y(), b.y(), c.y()});
  const int x0 = std::max(0, int(std::floor(min_x - 0.5)));
  const int x1 = std::min(width - 1, int(std::ceil(max_x - 0.5)));
  const int y0 = std::max(0, int(std::floor(min_y - 0.5)));
  const int y1 = std::min(height - 1, int(std::ceil(max_y - 0.5)));

  for (int y = y0; y <= y1; ++y) {
    const double sy = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double sx = x + 0.5;
      const double w0 = edge(a, b, sx, sy);
      const double w1 = edge(b, c, sx, sy);
      const double w2 = edge(c, a, sx, sy);
      const bool in = (w0 > 0.0 || (w0 == 0.0 && tl0)) && (w1 > 0.0 || (w1 == 0.0 && tl1)) &&
                      (w2 > 0.0 || (w2 == 0.0 && tl2));
      if (in) emit(x, y);
    }
  }
}

// Clips a camera-frame triangle against z = kNearClip; outputs 0..2 triangles.
int clip_triangle_near(const Vec3 in[3], Vec3 out[2][3]);

}  // namespace mbtrack
