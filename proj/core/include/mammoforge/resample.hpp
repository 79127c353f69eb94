#pragma once

#include <optional>

#include "mammoforge/transform.hpp"
#include "mammoforge/volume.hpp"

namespace mammoforge {

enum class Interpolation { nearest, trilinear };

/// Resample `src` onto `target`.
///
/// `xform` maps the source frame into the target frame, so each output voxel at
/// world point p takes the source value at xform.inverse()(p). Samples falling
/// outside the source grid are 0.
ImageVolume resample_scalar(const ImageVolume& src, const GridMeta& target,
                            const RigidTransform& xform, Interpolation interp);

/// Nearest-neighbour label resampling with the same mapping convention.
LabelVolume resample_labels(const LabelVolume& src, const GridMeta& target,
                            const RigidTransform& xform);

/// Trilinear sample at a continuous voxel index; nullopt outside the grid.
std::optional<double> sample_trilinear(const ImageVolume& src, const Vec3& index);

/// Affine map from target voxel index to source voxel index for a resampling.
struct IndexMap {
  Mat3 linear;
  Vec3 offset;
  Vec3 operator()(const Vec3& idx) const { return linear * idx + offset; }
};
IndexMap index_map(const GridMeta& src, const GridMeta& target, const RigidTransform& xform);

}  // namespace mammoforge
