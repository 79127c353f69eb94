#include "mammoforge/transform.hpp"

#include <algorithm>
#include <cmath>

namespace mammoforge {

Mat3 rotation_zyx(const Vec3& angles) {
  const double cx = std::cos(angles.x()), sx = std::sin(angles.x());
  const double cy = std::cos(angles.y()), sy = std::sin(angles.y());
  const double cz = std::cos(angles.z()), sz = std::sin(angles.z());
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  return rz * ry * rx;
}

Vec3 euler_zyx(const Mat3& r) {
  const double sy = std::clamp(-r(2, 0), -1.0, 1.0);
  const double y = std::asin(sy);
  double x = 0.0;
  double z = 0.0;
  if (std::abs(sy) < 1.0 - 1e-12) {
    x = std::atan2(r(2, 1), r(2, 2));
    z = std::atan2(r(1, 0), r(0, 0));
  } else {
    // Gimbal lock: only x - z (or x + z) is determined; put it all in x.
    x = std::atan2(-r(1, 2), r(1, 1));
  }
  return {x, y, z};
}

RigidTransform RigidTransform::identity(const Vec3& center) {
  RigidTransform t;
  t.center = center;
  return t;
}

Mat3 RigidTransform::rotation() const { return rotation_zyx(angles); }

Vec3 RigidTransform::apply(const Vec3& point) const {
  return rotation() * (point - center) + center + translation;
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation().transpose();
  RigidTransform inv;
  inv.angles = euler_zyx(rt);
  inv.center = center;
  inv.translation = -(rt * translation);
  return inv;
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  const Mat3 r = rotation();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = center + translation - r * center;
  return m;
}

RigidTransform compose(const RigidTransform& second, const RigidTransform& first) {
  const Mat3 r2 = second.rotation();
  RigidTransform out;
  out.center = first.center;
  out.angles = euler_zyx(r2 * first.rotation());
  out.translation =
      r2 * (first.center + first.translation - second.center) + second.center +
      second.translation - first.center;
  return out;
}

double rotation_distance(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace mammoforge
