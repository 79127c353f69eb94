#include "mammoforge/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace mammoforge {
namespace {

double ellipsoid(const Vec3& p, const Vec3& center, const Vec3& semi) {
  return ((p - center).array() / semi.array()).square().sum();
}

double uniform(std::mt19937_64& rng, double half_width) {
  return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
}

double intensity(Tissue t, PhantomSequence seq, const PhantomIntensities& in) {
  const bool t1 = seq == PhantomSequence::t1w;
  switch (t) {
    case Tissue::air: return in.air;
    case Tissue::chest_wall: return t1 ? in.t1w_chest : in.dce_chest;
    case Tissue::rib: return t1 ? in.t1w_rib : in.dce_rib;
    case Tissue::fat: return t1 ? in.t1w_fat : in.dce_fat;
    case Tissue::fibroglandular: return t1 ? in.t1w_fgt : in.dce_fgt;
    case Tissue::lesion: return t1 ? in.t1w_lesion : in.dce_lesion;
  }
  return in.air;
}

}  // namespace

std::vector<float> render_phantom(const PhantomShape& shape, const GridMeta& grid,
                                  const RigidTransform& frame_to_anatomy, PhantomSequence sequence,
                                  const PhantomIntensities& intensities) {
  constexpr int kSub = 3;
  std::vector<float> out(grid.voxel_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Index3 idx = grid.unravel(i);
    double sum = 0.0;
    for (int c = 0; c < kSub * kSub * kSub; ++c) {
      const Vec3 sub((c % kSub + 0.5) / kSub - 0.5, ((c / kSub) % kSub + 0.5) / kSub - 0.5,
                     (c / (kSub * kSub) + 0.5) / kSub - 0.5);
      const Vec3 p = frame_to_anatomy.apply(voxel_to_world(grid, Vec3(idx[0], idx[1], idx[2]) + sub));
      sum += intensity(phantom_tissue(shape, p), sequence, intensities);
    }
    out[i] = static_cast<float>(sum / (kSub * kSub * kSub));
  }
  return out;
}

Tissue phantom_tissue(const PhantomShape& s, const Vec3& p) {
  if (p.y() >= s.chest_wall_y) {
    for (double z : s.rib_z) {
      const double dy = p.y() - s.rib_y, dz = p.z() - z;
      if (dy * dy + dz * dz <= s.rib_radius * s.rib_radius) return Tissue::rib;
    }
    return Tissue::chest_wall;
  }
  if (ellipsoid(p, Vec3(0.0, s.chest_wall_y, 0.0), s.breast_semi_axes) > 1.0) return Tissue::air;
  if ((p - s.lesion_center).squaredNorm() <= s.lesion_radius * s.lesion_radius) return Tissue::lesion;
  if (ellipsoid(p, s.fgt_center, s.fgt_semi_axes) <= 1.0) return Tissue::fibroglandular;
  return Tissue::fat;
}

GridMeta phantom_grid() {
  GridMeta g;
  g.dims = {56, 48, 36};
  g.spacing = Vec3(1.5, 1.5, 2.0);
  for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (g.dims[a] - 1) * g.spacing[a];
  return g;
}

Phantom make_phantom(const PhantomOptions& options) {
  std::mt19937_64 rng(options.seed);
  PhantomShape shape;
  const auto jitter = [&](double v) { return v * (1.0 + uniform(rng, options.shape_jitter)); };
  for (int a = 0; a < 3; ++a) {
    shape.breast_semi_axes[a] = jitter(shape.breast_semi_axes[a]);
    shape.fgt_semi_axes[a] = jitter(shape.fgt_semi_axes[a]);
  }
  shape.lesion_radius = jitter(shape.lesion_radius);

  const GridMeta grid = phantom_grid();
  RigidTransform g = RigidTransform::identity(grid.center());
  {
    const double deg = std::numbers::pi / 180.0;
    for (int a = 0; a < 3; ++a) g.angles[a] = uniform(rng, options.max_angle_deg * deg);
    for (int a = 0; a < 3; ++a) g.translation[a] = uniform(rng, options.max_shift_mm);
  }
  if (options.dce_to_t1w) g = *options.dce_to_t1w;

  const std::size_t n = grid.voxel_count();
  std::vector<float> t1w = render_phantom(shape, grid, RigidTransform::identity(grid.center()), PhantomSequence::t1w);
  std::vector<float> dce = render_phantom(shape, grid, g, PhantomSequence::dce);
  std::vector<Label> anatomy(n), lesion(n), fused(n);
  std::normal_distribution<double> noise(0.0, options.noise_sigma);
  for (std::size_t i = 0; i < n; ++i) {
    t1w[i] = static_cast<float>(t1w[i] + noise(rng));
    dce[i] = static_cast<float>(dce[i] + noise(rng));
    const Index3 idx = grid.unravel(i);
    const Vec3 p = voxel_to_world(grid, Vec3(idx[0], idx[1], idx[2]));
    const Tissue t = phantom_tissue(shape, p);
    anatomy[i] = t == Tissue::fat                                    ? labels::whole_breast
                 : (t == Tissue::fibroglandular || t == Tissue::lesion) ? labels::fibroglandular
                                                                        : labels::background;
    lesion[i] = phantom_tissue(shape, g.apply(p)) == Tissue::lesion ? labels::lesion : labels::background;
    fused[i] = t == Tissue::lesion ? labels::lesion : anatomy[i];
  }
  return Phantom{shape,
                 ImageVolume(grid, std::move(t1w)),
                 ImageVolume(grid, std::move(dce)),
                 LabelVolume(grid, std::move(anatomy)),
                 LabelVolume(grid, std::move(lesion)),
                 LabelVolume(grid, std::move(fused)),
                 g};
}

}  // namespace mammoforge
