#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mammoforge/volume.hpp"

namespace mammoforge {

/// A binary axial-slice annotation. `mask2d` has dims[0] * dims[1] entries,
/// x-fastest, non-zero inside.
struct SliceAnnotation {
  int slice_index = 0;
  std::vector<std::uint8_t> mask2d;
};

/// How the weight between two bracketing annotations varies with slice position.
enum class SliceProfile {
  linear,   // weight proportional to slice distance
  tapered,  // elliptical fall-off between the widest annotation and the extreme ones
};

/// Shape-based completion of a sparse axial annotation (e.g. top / middle / bottom).
///
/// Each annotation becomes a 2-D signed distance field in millimetres
/// (negative inside). Intermediate slices blend the two bracketing fields
/// after aligning their centroids; the blended field's negative region is the
/// mask. Annotated slices are copied verbatim and slices outside the
/// annotated range stay empty. With `SliceProfile::tapered` and at least three
/// annotations, intervals running from the widest annotation to the first or
/// last one use the weight 1 - sqrt(1 - s^2) (s = normalised distance from the
/// widest slice), which follows a rounded lesion cap instead of a cone.
///
/// Throws ValidationError("insufficient annotations") for fewer than two
/// annotations and for repeated slice indices, empty or mis-sized masks.
LabelVolume complete_from_slices(std::span<const SliceAnnotation> annotations, const GridMeta& target,
                                 SliceProfile profile = SliceProfile::tapered, Label label = labels::lesion);

/// Every axial slice of `volume` containing `label`, as annotations.
std::vector<SliceAnnotation> annotations_from_volume(const LabelVolume& volume, Label label);

}  // namespace mammoforge
