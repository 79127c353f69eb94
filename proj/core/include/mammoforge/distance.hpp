#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mammoforge/grid.hpp"

namespace mammoforge {

/// Exact squared Euclidean distance transform in physical units.
///
/// For every voxel of an x-fastest grid with `dims`, returns the squared
/// distance (mm^2) between its centre and the nearest voxel with a non-zero
/// entry in `features`, measured with per-axis `spacing`. Voxels are +inf when
/// there is no feature at all. Separable lower-envelope algorithm, linear time.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> features,
                                               const Index3& dims, const Vec3& spacing);

}  // namespace mammoforge
