#pragma once

#include <cstdint>
#include <vector>

#include "mammoforge/transform.hpp"
#include "mammoforge/volume.hpp"

namespace mammoforge {

enum class Metric { ncc, mi };

struct RegistrationConfig {
  Metric metric = Metric::ncc;
  int pyramid_levels = 3;
  int max_iters_per_level = 200;
  double param_tolerance = 1e-4;
  double sample_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RegistrationResult {
  RigidTransform transform;  // maps the moving frame onto the fixed frame
  double final_metric = 0.0;
  std::vector<int> iterations_used;  // coarsest level first
  bool converged = false;
};

/// Number of joint-histogram bins per axis for mutual information.
inline constexpr int kMutualInformationBins = 32;

/// Minimum number of overlapping samples a similarity evaluation needs.
inline constexpr std::size_t kMinOverlapSamples = 100;

/// Similarity of `fixed` and `moving` after mapping `moving` into the fixed
/// frame with `xform`. Fixed voxels are subsampled with a seeded Bernoulli
/// draw of probability `sample_fraction`; moving values are trilinear.
/// NCC lies in [-1, 1]; MI is in nats. Throws ProcessingError when fewer than
/// kMinOverlapSamples samples overlap.
double similarity(const ImageVolume& fixed, const ImageVolume& moving, const RigidTransform& xform,
                  Metric metric, double sample_fraction, std::uint64_t seed);

/// Rigid registration of `moving` onto `fixed`.
///
/// Coarse-to-fine pyramid (factor 2 per level, Gaussian pre-smoothing) with a
/// Nelder-Mead search over three ZYX angles (scaled by 100 so a radian is
/// worth 100 mm) and three translations, rotating about the fixed grid centre.
RegistrationResult register_rigid(const ImageVolume& fixed, const ImageVolume& moving,
                                  const RegistrationConfig& config);

/// Grid of a pyramid level: `factor`-times coarser, same physical extent.
GridMeta downsampled_grid(const GridMeta& meta, int factor);

}  // namespace mammoforge
