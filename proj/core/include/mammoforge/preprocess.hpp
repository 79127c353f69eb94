#pragma once

#include <span>

#include "mammoforge/volume.hpp"

namespace mammoforge {

/// Display/intensity window; maps [low, high] linearly onto [0, 1].
struct WindowSpec {
  double low = 0.0;
  double high = 1.0;

  void validate() const;  // high > low
};

/// Separable Gaussian smoothing with a per-axis sigma in millimetres.
/// Edges are clamped (replicate boundary). A zero sigma leaves that axis alone.
ImageVolume smooth_gaussian(const ImageVolume& vol, const Vec3& sigma_mm);

/// Isotropic physical-unit Gaussian denoising; sigma_mm must be > 0.
ImageVolume denoise_gaussian(const ImageVolume& vol, double sigma_mm);

struct NormalizeResult {
  ImageVolume volume;
  bool degenerate = false;  // all voxels equal; volume is all zeros
};

/// Linear map of the p_low / p_high percentiles onto 0 / 1, clamped to [0, 1].
/// Percentiles interpolate linearly between order statistics.
NormalizeResult normalize_percentile(const ImageVolume& vol, double p_low, double p_high);

ImageVolume apply_window(const ImageVolume& vol, const WindowSpec& window);

/// Percentile (0..100) of `values` with linear interpolation between order statistics.
double percentile(std::span<const float> values, double p);

}  // namespace mammoforge
