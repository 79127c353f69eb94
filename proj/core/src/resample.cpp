#include "mammoforge/resample.hpp"

#include <cmath>

namespace mammoforge {
namespace {

constexpr double kEdgeTolerance = 1e-6;

// Locates a continuous coordinate on an axis of n samples; false when outside.
bool locate(double x, int n, int& i0, double& frac) {
  if (x < -kEdgeTolerance || x > (n - 1) + kEdgeTolerance) return false;
  if (n == 1) {
    i0 = 0;
    frac = 0.0;
    return true;
  }
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  i0 = std::min(static_cast<int>(std::floor(x)), n - 2);
  frac = x - i0;
  return true;
}

bool nearest_index(const GridMeta& meta, const Vec3& idx, Index3& out) {
  for (int a = 0; a < 3; ++a) {
    const double r = std::floor(idx[a] + 0.5);
    if (r < 0 || r >= meta.dims[a]) return false;
    out[a] = static_cast<int>(r);
  }
  return true;
}

}  // namespace

IndexMap index_map(const GridMeta& src, const GridMeta& target, const RigidTransform& xform) {
  // target idx -> world -> inverse transform -> source idx
  const Mat3 rt = xform.rotation().transpose();
  const Mat3 to_src = src.spacing.cwiseInverse().asDiagonal() * src.direction.transpose();
  IndexMap m;
  m.linear = to_src * rt * target.direction * target.spacing.asDiagonal();
  m.offset = to_src * (rt * (target.origin - xform.center - xform.translation) + xform.center - src.origin);
  return m;
}

std::optional<double> sample_trilinear(const ImageVolume& src, const Vec3& index) {
  const auto& meta = src.meta();
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    if (!locate(index[a], meta.dims[a], i0[a], f[a])) return std::nullopt;
  }
  const int i1x = meta.dims[0] > 1 ? i0[0] + 1 : i0[0];
  const int i1y = meta.dims[1] > 1 ? i0[1] + 1 : i0[1];
  const int i1z = meta.dims[2] > 1 ? i0[2] + 1 : i0[2];
  const auto v = [&](int i, int j, int k) { return static_cast<double>(src.at(i, j, k)); };
  const double c00 = v(i0[0], i0[1], i0[2]) * (1 - f[0]) + v(i1x, i0[1], i0[2]) * f[0];
  const double c10 = v(i0[0], i1y, i0[2]) * (1 - f[0]) + v(i1x, i1y, i0[2]) * f[0];
  const double c01 = v(i0[0], i0[1], i1z) * (1 - f[0]) + v(i1x, i0[1], i1z) * f[0];
  const double c11 = v(i0[0], i1y, i1z) * (1 - f[0]) + v(i1x, i1y, i1z) * f[0];
  const double c0 = c00 * (1 - f[1]) + c10 * f[1];
  const double c1 = c01 * (1 - f[1]) + c11 * f[1];
  return c0 * (1 - f[2]) + c1 * f[2];
}

ImageVolume resample_scalar(const ImageVolume& src, const GridMeta& target,
                            const RigidTransform& xform, Interpolation interp) {
  target.validate();
  const IndexMap map = index_map(src.meta(), target, xform);
  std::vector<float> out(target.voxel_count(), 0.0f);
  std::size_t n = 0;
  for (int k = 0; k < target.dims[2]; ++k) {
    for (int j = 0; j < target.dims[1]; ++j) {
      for (int i = 0; i < target.dims[0]; ++i, ++n) {
        const Vec3 idx = map(Vec3(i, j, k));
        if (interp == Interpolation::nearest) {
          Index3 s;
          if (nearest_index(src.meta(), idx, s)) out[n] = src.at(s[0], s[1], s[2]);
        } else if (const auto value = sample_trilinear(src, idx)) {
          out[n] = static_cast<float>(*value);
        }
      }
    }
  }
  return ImageVolume(target, std::move(out));
}

LabelVolume resample_labels(const LabelVolume& src, const GridMeta& target,
                            const RigidTransform& xform) {
  target.validate();
  const IndexMap map = index_map(src.meta(), target, xform);
  std::vector<Label> out(target.voxel_count(), labels::background);
  std::size_t n = 0;
  for (int k = 0; k < target.dims[2]; ++k) {
    for (int j = 0; j < target.dims[1]; ++j) {
      for (int i = 0; i < target.dims[0]; ++i, ++n) {
        Index3 s;
        if (nearest_index(src.meta(), map(Vec3(i, j, k)), s)) out[n] = src.at(s[0], s[1], s[2]);
      }
    }
  }
  return LabelVolume(target, std::move(out));
}

}  // namespace mammoforge
