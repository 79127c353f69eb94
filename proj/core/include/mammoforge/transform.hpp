#pragma once

#include <Eigen/Core>

#include "mammoforge/grid.hpp"

namespace mammoforge {

/// Six degree-of-freedom rigid transform about an explicit centre.
///
///   p' = R (p - center) + center + translation,  R = Rz(angles.z) Ry(angles.y) Rx(angles.x)
struct RigidTransform {
  Vec3 angles = Vec3::Zero();  // radians, ZYX convention
  Vec3 translation = Vec3::Zero();
  Vec3 center = Vec3::Zero();

  static RigidTransform identity(const Vec3& center = Vec3::Zero());

  Mat3 rotation() const;
  Vec3 apply(const Vec3& point) const;
  RigidTransform inverse() const;

  /// Homogeneous 4x4 matrix of the mapping.
  Eigen::Matrix4d matrix() const;
};

Mat3 rotation_zyx(const Vec3& angles);

/// Inverse of rotation_zyx; returns angles with |y| <= pi/2.
Vec3 euler_zyx(const Mat3& rotation);

/// Transform equivalent to applying `first` and then `second`, expressed about first.center.
RigidTransform compose(const RigidTransform& second, const RigidTransform& first);

/// Geodesic angle (radians) of the rotation taking `a` to `b`.
double rotation_distance(const Mat3& a, const Mat3& b);

}  // namespace mammoforge
