// Camera model, rigid transforms, rays and two-view triangulation.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace mbtrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Rigid transform mapping world (mesh-frame) points into the camera frame:
/// p_cam = R * p_world + t. Rotation is stored as a unit quaternion.
struct Pose {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};
  Vec3 t{0.0, 0.0, 0.0};

  Pose() = default;
  Pose(const Eigen::Quaterniond& q_, const Vec3& t_) : q(q_.normalized()), t(t_) {}
  Pose(const Mat3& r, const Vec3& t_) : q(r), t(t_) { q.normalize(); }

  static Pose identity() { return Pose{}; }

  Mat3 rotation() const { return q.toRotationMatrix(); }
  Vec3 apply(const Vec3& p) const { return q * p + t; }
  // Direction transform (rotation only), used for normals.
  Vec3 rotate(const Vec3& d) const { return q * d; }

  // this ∘ other: (this ∘ other)(p) = this(other(p)).
  Pose compose(const Pose& other) const {
    return Pose{(q * other.q).normalized(), q * other.t + t};
  }
  Pose inverse() const {
    Eigen::Quaterniond qi = q.conjugate();
    return Pose{qi, qi * (-t)};
  }
  // Camera center expressed in world coordinates.
  Vec3 center() const { return q.conjugate() * (-t); }

  // Left-multiplicative retraction with tangent [omega | upsilon]:
  // T <- (Exp(omega), upsilon) ∘ T.
  Pose retract(const Vec6& delta) const;

  // Row-major [R | t] as a flat 12-vector, the on-disk pose format.
  Eigen::Matrix<double, 12, 1> to_row_major() const;
  static Pose from_row_major(const Eigen::Matrix<double, 12, 1>& m);
};

/// Quaternion exponential of an axis-angle vector (stable near zero).
Eigen::Quaterniond quat_exp(const Vec3& omega);

/// Geodesic angle (radians) between two rotations.
double rotation_angle(const Pose& a, const Pose& b);

/// Pinhole camera, images assumed pre-rectified.
struct Intrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 &&
           cy < height && width > 0 && height > 0;
  }
  bool in_bounds(const Vec2& px) const {
    return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
  }
};

struct Ray {
  Vec3 origin{0.0, 0.0, 0.0};
  Vec3 direction{0.0, 0.0, 1.0};  // unit length

  static Ray through(const Vec3& origin, const Vec3& dir) {
    return Ray{origin, dir.normalized()};
  }
  Vec3 at(double t) const { return origin + t * direction; }
};

inline constexpr double kMinDepth = 1e-9;

/// Projects a world point; nullopt when the camera-frame depth is <= 1e-9.
std::optional<Vec2> project_point(const Pose& pose, const Intrinsics& k, const Vec3& point);

/// World-frame viewing ray through a pixel. Throws std::out_of_range for
/// pixels outside the image.
Ray ray_through_pixel(const Pose& pose, const Intrinsics& k, const Vec2& pixel);

struct RayHit {
  double t = 0.0;       // distance along the (unit) ray direction
  Vec2 barycentric;     // hit = (1-u-v)*v0 + u*v1 + v*v2
};

/// Moller-Trumbore intersection; front-of-origin hits only (t > 1e-9).
std::optional<RayHit> ray_triangle_intersect(const Ray& ray, const Vec3& v0,
                                             const Vec3& v1, const Vec3& v2);

struct Triangulation {
  Vec3 point;
  double parallax_deg = 0.0;
};

/// Two-view DLT triangulation. nullopt when the ray parallax is below
/// min_parallax_deg or the point lands behind either camera.
std::optional<Triangulation> triangulate(const Pose& pose_a, const Pose& pose_b,
                                         const Vec2& pixel_a, const Vec2& pixel_b,
                                         const Intrinsics& k,
                                         double min_parallax_deg = 0.5);

}  // namespace mbtrack
