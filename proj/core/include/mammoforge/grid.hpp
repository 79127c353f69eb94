#pragma once

#include <array>
#include <cstddef>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mammoforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index3 = std::array<int, 3>;

/// Physical geometry of a voxel grid.
///
/// World coordinates are millimetres in the patient LPS frame. `origin` is the
/// world position of the centre of voxel (0,0,0); column `c` of `direction` is
/// the world direction of voxel axis `c`. Voxels are stored x-fastest.
struct GridMeta {
  Index3 dims{1, 1, 1};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  Mat3 direction = Mat3::Identity();

  std::size_t voxel_count() const noexcept {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t index(int i, int j, int k) const noexcept {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }

  Index3 unravel(std::size_t linear) const noexcept {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(linear % nx), static_cast<int>((linear / nx) % ny),
            static_cast<int>(linear / (nx * ny))};
  }

  bool contains(int i, int j, int k) const noexcept {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }

  /// World position of the grid centre (default rotation centre).
  Vec3 center() const;

  /// Throws ValidationError when dims, spacing or direction are invalid.
  void validate() const;
};

Vec3 voxel_to_world(const GridMeta& meta, const Vec3& index);
Vec3 world_to_voxel(const GridMeta& meta, const Vec3& world);

/// Same dims exactly; spacing, origin and direction within `tolerance`.
bool same_grid(const GridMeta& a, const GridMeta& b, double tolerance = 1e-5);

}  // namespace mammoforge
