#include "mbtrack/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mbtrack {

bool BinaryMask::covers(const Vec2& px) const {
  const int x = int(std::floor(px.x()));
  const int y = int(std::floor(px.y()));
  return contains(x, y) && at(x, y);
}

size_t BinaryMask::count() const {
  return size_t(std::accumulate(bits.begin(), bits.end(), size_t(0)));
}

BinaryMask dilate(const BinaryMask& mask, int radius_px) {
  if (radius_px <= 0) return mask;
  const int w = mask.width, h = mask.height;
  // Separable window-OR via prefix counts, horizontal then vertical.
  BinaryMask horiz(w, h);
  std::vector<uint32_t> prefix(size_t(w) + 1);
  for (int y = 0; y < h; ++y) {
    prefix[0] = 0;
    const uint8_t* row = &mask.bits[size_t(y) * w];
    for (int x = 0; x < w; ++x) prefix[x + 1] = prefix[x] + row[x];
    uint8_t* out = &horiz.bits[size_t(y) * w];
    for (int x = 0; x < w; ++x) {
      const int lo = std::max(0, x - radius_px);
      const int hi = std::min(w - 1, x + radius_px);
      out[x] = prefix[hi + 1] - prefix[lo] > 0 ? 1 : 0;
    }
  }
  BinaryMask out(w, h);
  std::vector<uint32_t> col_prefix(size_t(h) + 1);
  for (int x = 0; x < w; ++x) {
    col_prefix[0] = 0;
    for (int y = 0; y < h; ++y) col_prefix[y + 1] = col_prefix[y] + horiz.bits[size_t(y) * w + x];
    for (int y = 0; y < h; ++y) {
      const int lo = std::max(0, y - radius_px);
      const int hi = std::min(h - 1, y + radius_px);
      out.bits[size_t(y) * w + x] = col_prefix[hi + 1] - col_prefix[lo] > 0 ? 1 : 0;
    }
  }
  return out;
}

int clip_triangle_near(const Vec3 in[3], Vec3 out[2][3]) {
  Vec3 poly[4];
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const Vec3& cur = in[i];
    const Vec3& prev = in[(i + 2) % 3];
    const bool cur_in = cur.z() >= kNearClip;
    const bool prev_in = prev.z() >= kNearClip;
    if (cur_in != prev_in) {
      const double s = (kNearClip - prev.z()) / (cur.z() - prev.z());
      poly[n++] = prev + s * (cur - prev);
    }
    if (cur_in) poly[n++] = cur;
  }
  if (n < 3) return 0;
  out[0][0] = poly[0];
  out[0][1] = poly[1];
  out[0][2] = poly[2];
  if (n == 3) return 1;
  out[1][0] = poly[0];
  out[1][1] = poly[2];
  out[1][2] = poly[3];
  return 2;
}

namespace {

inline Vec2 project_cam(const Vec3& pc, const Intrinsics& k) {
  return Vec2{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
}

template <typename EmitFn>
void rasterize_face(const TriangleMesh& mesh, int f, const Pose& pose, const Intrinsics& k,
                    EmitFn&& emit) {
  const Vec3 cam[3] = {pose.apply(mesh.v0(f)), pose.apply(mesh.v1(f)), pose.apply(mesh.v2(f))};
  Vec3 clipped[2][3];
  const int n = clip_triangle_near(cam, clipped);
  for (int i = 0; i < n; ++i) {
    rasterize_triangle(project_cam(clipped[i][0], k), project_cam(clipped[i][1], k),
                       project_cam(clipped[i][2], k), k.width, k.height, emit);
  }
}

}  // namespace

BinaryMask render_mask(const TriangleMesh& mesh, const Pose& pose, const Intrinsics& k,
                       int dilation_px) {
  if (dilation_px < 0) throw std::invalid_argument("render_mask: negative dilation");
  BinaryMask mask(k.width, k.height);
  for (int f = 0; f < mesh.face_count(); ++f) {
    rasterize_face(mesh, f, pose, k, [&](int x, int y) { mask.set(x, y); });
  }
  return dilate(mask, dilation_px);
}

std::vector<std::optional<double>> render_depth(const TriangleMesh&, const MeshBvh& bvh,
                                                const Pose& pose, const Intrinsics& k,
                                                const std::vector<Vec2>& pixels) {
  std::vector<std::optional<double>> depths(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    const Ray ray = ray_through_pixel(pose, k, pixels[i]);
    if (const auto hit = bvh.intersect(ray)) {
      depths[i] = pose.apply(ray.at(hit->t)).z();
    }
  }
  return depths;
}

std::vector<std::optional<double>> render_depth(const TriangleMesh& mesh, const Pose& pose,
                                                const Intrinsics& k,
                                                const std::vector<Vec2>& pixels) {
  const MeshBvh bvh(mesh);
  return render_depth(mesh, bvh, pose, k, pixels);
}

void texture_update(TriangleMesh& mesh, const Pose& pose, const ImageRGB& image,
                    const Intrinsics& k) {
  if (image.width != k.width || image.height != k.height) {
    throw std::invalid_argument("texture_update: image dimensions do not match intrinsics");
  }
  for (int f = 0; f < mesh.face_count(); ++f) {
    if (pose.rotate(mesh.face_normals[f]).z() >= 0.0) continue;  // back-facing
    Vec3 sum = Vec3::Zero();
    long count = 0;
    rasterize_face(mesh, f, pose, k, [&](int x, int y) {
      const uint8_t* px = image.at(x, y);
      sum += Vec3{double(px[0]), double(px[1]), double(px[2])};
      ++count;
    });
    if (count == 0) continue;
    const Vec3 mean = sum / double(count);
    const double w = mesh.face_weights[f];
    mesh.face_colors[f] = (w * mesh.face_colors[f] + mean) / (w + 1.0);
    mesh.face_weights[f] = std::min(kMaxTextureWeight, w + 1.0);
  }
}

}  // namespace mbtrack
