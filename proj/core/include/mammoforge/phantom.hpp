#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mammoforge/transform.hpp"
#include "mammoforge/volume.hpp"

namespace mammoforge {

/// Analytic breast phantom: air, chest wall, a half-ellipsoid of fat, an
/// ellipsoidal fibroglandular core and a spherical lesion that is dark on T1W
/// and bright on DCE. Ribs run left-right inside the chest wall.
struct PhantomShape {
  double chest_wall_y = 12.0;  // mm; the chest wall fills y >= this plane
  Vec3 breast_semi_axes{34.0, 40.0, 30.0};
  Vec3 fgt_center{0.0, -6.0, 0.0};
  Vec3 fgt_semi_axes{18.0, 14.0, 16.0};
  Vec3 lesion_center{6.0, -8.0, 4.0};
  double lesion_radius = 12.0;
  std::vector<double> rib_z{-24.0, -8.0, 8.0, 24.0};  // rib axes are parallel to x
  double rib_y = 22.0;
  double rib_radius = 4.0;
};

enum class Tissue : std::uint8_t { air, chest_wall, rib, fat, fibroglandular, lesion };

/// Tissue at a world point of the anatomy (T1W) frame.
Tissue phantom_tissue(const PhantomShape& shape, const Vec3& point);

struct PhantomIntensities {
  double air = 0.02;
  double t1w_rib = 0.12, dce_rib = 0.1;
  double t1w_chest = 0.45, t1w_fat = 0.8, t1w_fgt = 0.3, t1w_lesion = 0.3;
  double dce_chest = 0.3, dce_fat = 0.4, dce_fgt = 0.35, dce_lesion = 0.9;
};

enum class PhantomSequence { t1w, dce };

/// Noise-free rendering of `shape` on `grid`. Voxel (world point q) shows the
/// anatomy at frame_to_anatomy(q). Each voxel averages 3 x 3 x 3 sub-samples,
/// giving partial-volume edges.
std::vector<float> render_phantom(const PhantomShape& shape, const GridMeta& grid,
                                  const RigidTransform& frame_to_anatomy, PhantomSequence sequence,
                                  const PhantomIntensities& intensities = {});

struct PhantomOptions {
  std::uint64_t seed = 0;
  double noise_sigma = 0.015;
  double shape_jitter = 0.05;  // relative, applied to every semi-axis and radius
  double max_shift_mm = 3.0;
  double max_angle_deg = 3.0;
  /// Motion between the acquisitions; drawn from the seed when absent.
  std::optional<RigidTransform> dce_to_t1w;
};

struct Phantom {
  PhantomShape shape;
  ImageVolume t1w;
  ImageVolume dce;
  // Truth masks classify voxel centres.
  LabelVolume truth_anatomy;  // T1W grid; the lesion is dark on T1W and counts as fibroglandular
  LabelVolume truth_lesion;   // DCE grid, label 3
  LabelVolume truth_fused;    // T1W grid, labels 1 to 3
  RigidTransform dce_to_t1w;  // maps DCE world points into the T1W frame
};

/// 56 x 48 x 36 voxels of 1.5 x 1.5 x 2 mm centred on the origin.
GridMeta phantom_grid();

Phantom make_phantom(const PhantomOptions& options = {});

}  // namespace mammoforge
