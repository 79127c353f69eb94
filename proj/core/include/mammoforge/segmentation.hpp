#pragma once

#include <span>

#include "mammoforge/volume.hpp"

namespace mammoforge {

/// Otsu threshold over a 256-bin histogram spanning [min, max] of `values`.
/// Returns the upper edge of the lower class; values strictly above it are foreground.
double otsu_threshold(std::span<const float> values);

/// Classical whole-breast / fibroglandular segmentation of a normalised
/// non-fat-suppressed T1W volume.
///
///  1. Otsu separates body from air.
///  2. The chest wall is the plane along the anterior-posterior voxel axis
///     where the foreground fraction rises most steeply; only planes anterior
///     to it are kept.
///  3. The largest 6-connected anterior component becomes whole_breast;
///     enclosed cavities are filled.
///  4. A second Otsu split inside the breast marks the darker voxels as
///     fibroglandular (fat is bright on these sequences). Voxels on the
///     breast surface stay whole_breast.
///
/// Throws ProcessingError("no anatomy detected") for empty foregrounds.
LabelVolume segment_baseline_breast(const ImageVolume& t1w);

/// 26-connected region growing from `seed` over voxels with
/// |I - I(seed)| <= threshold_delta; the region is labelled lesion.
/// Throws ValidationError when the seed is outside the volume or its
/// intensity is not above the global Otsu foreground threshold.
LabelVolume segment_baseline_lesion(const ImageVolume& dce, const Index3& seed, double threshold_delta);

/// Brightest voxel of a lightly smoothed copy of `dce`; a default lesion seed.
Index3 find_lesion_seed(const ImageVolume& dce);

}  // namespace mammoforge
