#include "mbtrack/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace mbtrack {

Eigen::Quaterniond quat_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    // First-order expansion; renormalization absorbs the truncation.
    Eigen::Quaterniond q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * theta;
  const Vec3 axis = omega / theta;
  const double s = std::sin(half);
  return Eigen::Quaterniond(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

Pose Pose::retract(const Vec6& delta) const {
  const Vec3 omega = delta.head<3>();
  const Vec3 upsilon = delta.tail<3>();
  const Eigen::Quaterniond dq = quat_exp(omega);
  Pose out;
  out.q = (dq * q).normalized();
  out.t = dq * t + upsilon;
  return out;
}

Eigen::Matrix<double, 12, 1> Pose::to_row_major() const {
  Eigen::Matrix<double, 12, 1> m;
  const Mat3 r = rotation();
  for (int i = 0; i < 3; ++i) {
    m[4 * i + 0] = r(i, 0);
    m[4 * i + 1] = r(i, 1);
    m[4 * i + 2] = r(i, 2);
    m[4 * i + 3] = t[i];
  }
  return m;
}

Pose Pose::from_row_major(const Eigen::Matrix<double, 12, 1>& m) {
  Mat3 r;
  Vec3 t;
  for (int i = 0; i < 3; ++i) {
    r(i, 0) = m[4 * i + 0];
    r(i, 1) = m[4 * i + 1];
    r(i, 2) = m[4 * i + 2];
    t[i] = m[4 * i + 3];
  }
  // Project onto SO(3) so round-trips through text stay orthonormal.
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 rr = svd.matrixU() * svd.matrixV().transpose();
  if (rr.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    rr = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return Pose{rr, t};
}

double rotation_angle(const Pose& a, const Pose& b) {
  Eigen::Quaterniond d = a.q.conjugate() * b.q;
  d.normalize();
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

std::optional<Vec2> project_point(const Pose& pose, const Intrinsics& k, const Vec3& point) {
  const Vec3 pc = pose.apply(point);
  if (pc.z() <= kMinDepth) return std::nullopt;
  return Vec2{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
}

Ray ray_through_pixel(const Pose& pose, const Intrinsics& k, const Vec2& pixel) {
  if (!k.in_bounds(pixel)) {
    throw std::out_of_range("ray_through_pixel: pixel outside image bounds");
  }
  const Vec3 dir_cam{(pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0};
  const Mat3 r_wc = pose.q.conjugate().toRotationMatrix();
  return Ray::through(pose.center(), r_wc * dir_cam);
}

std::optional<RayHit> ray_triangle_intersect(const Ray& ray, const Vec3& v0,
                                             const Vec3& v1, const Vec3& v2) {
  const Vec3 e1 = v1 - v0;
  const Vec3 e2 = v2 - v0;
  const Vec3 pvec = ray.direction.cross(e2);
  const double det = e1.dot(pvec);
  if (det == 0.0) return std::nullopt;  // parallel
  const double inv_det = 1.0 / det;
  const Vec3 tvec = ray.origin - v0;
  const double u = tvec.dot(pvec) * inv_det;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = ray.direction.dot(qvec) * inv_det;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qvec) * inv_det;
  if (t <= kMinDepth) return std::nullopt;
  return RayHit{t, Vec2{u, v}};
}

std::optional<Triangulation> triangulate(const Pose& pose_a, const Pose& pose_b,
                                         const Vec2& pixel_a, const Vec2& pixel_b,
                                         const Intrinsics& k, double min_parallax_deg) {
  const Ray ray_a = ray_through_pixel(pose_a, k, pixel_a);
  const Ray ray_b = ray_through_pixel(pose_b, k, pixel_b);
  const double cosang =
      std::clamp(ray_a.direction.dot(ray_b.direction), -1.0, 1.0);
  const double parallax_deg = std::acos(cosang) * 180.0 / M_PI;
  if (parallax_deg < min_parallax_deg) return std::nullopt;

  // DLT on the two projection equations.
  Eigen::Matrix<double, 3, 4> pa, pb;
  Mat3 km = Mat3::Identity();
  km(0, 0) = k.fx;
  km(1, 1) = k.fy;
  km(0, 2) = k.cx;
  km(1, 2) = k.cy;
  pa.leftCols<3>() = km * pose_a.rotation();
  pa.col(3) = km * pose_a.t;
  pb.leftCols<3>() = km * pose_b.rotation();
  pb.col(3) = km * pose_b.t;

  Eigen::Matrix4d a;
  a.row(0) = pixel_a.x() * pa.row(2) - pa.row(0);
  a.row(1) = pixel_a.y() * pa.row(2) - pa.row(1);
  a.row(2) = pixel_b.x() * pb.row(2) - pb.row(0);
  a.row(3) = pixel_b.y() * pb.row(2) - pb.row(1);

  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-15) return std::nullopt;
  const Vec3 point = h.head<3>() / h(3);

  if (pose_a.apply(point).z() <= kMinDepth || pose_b.apply(point).z() <= kMinDepth) {
    return std::nullopt;
  }
  return Triangulation{point, parallax_deg};
}

}  // namespace mbtrack
