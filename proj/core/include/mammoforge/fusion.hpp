#pragma once

#include <cstddef>

#include "mammoforge/transform.hpp"
#include "mammoforge/volume.hpp"

namespace mammoforge {

struct FusionResult {
  LabelVolume fused;
  std::size_t lesion_voxels = 0;          // lesion voxels after resampling
  std::size_t lesion_outside_breast = 0;  // of which the anatomy mask is background

  /// Fraction of lesion voxels inside the anatomy mask; 1 when there is no lesion.
  double containment() const noexcept {
    return lesion_voxels == 0 ? 1.0
                              : 1.0 - static_cast<double>(lesion_outside_breast) / static_cast<double>(lesion_voxels);
  }
};

/// Merges an anatomy mask (labels 1, 2) with a lesion mask from another frame.
///
/// `xform` maps the lesion frame onto the anatomy frame. Lesion voxels are
/// resampled with nearest neighbour onto the anatomy grid, then each voxel
/// keeps the highest-precedence label: lesion > fibroglandular > whole breast.
/// Lesion voxels outside the breast are kept and counted.
/// Throws StateError when the anatomy mask is empty.
FusionResult fuse_labels(const LabelVolume& anatomy, const LabelVolume& lesion, const RigidTransform& xform);

}  // namespace mammoforge
