#include "mammoforge/slice_completion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mammoforge/distance.hpp"
#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

struct SliceField {
  int slice = 0;
  std::vector<double> sdf;
  double cx = 0.0, cy = 0.0;  // centroid, pixel index units
  std::size_t area = 0;
  const SliceAnnotation* source = nullptr;
};

constexpr double kFarInside = -1e6;

SliceField make_field(const SliceAnnotation& a, const GridMeta& meta) {
  const int nx = meta.dims[0], ny = meta.dims[1];
  const Index3 dims{nx, ny, 1};
  const Vec3 spacing(meta.spacing[0], meta.spacing[1], 1.0);
  std::vector<std::uint8_t> inside(a.mask2d.size()), outside(a.mask2d.size());
  SliceField f;
  f.slice = a.slice_index;
  f.source = &a;
  for (std::size_t i = 0; i < a.mask2d.size(); ++i) {
    inside[i] = a.mask2d[i] ? 1 : 0;
    outside[i] = a.mask2d[i] ? 0 : 1;
    if (inside[i]) {
      f.cx += static_cast<double>(i % nx);
      f.cy += static_cast<double>(i / nx);
      ++f.area;
    }
  }
  f.cx /= static_cast<double>(f.area);
  f.cy /= static_cast<double>(f.area);
  const auto to_inside = squared_distance_transform(inside, dims, spacing);
  const auto to_outside = squared_distance_transform(outside, dims, spacing);
  // Half-pixel offset places the zero level between inside and outside centres.
  const double half = 0.5 * std::min(meta.spacing[0], meta.spacing[1]);
  f.sdf.resize(a.mask2d.size());
  for (std::size_t i = 0; i < f.sdf.size(); ++i) {
    if (inside[i]) {
      f.sdf[i] = std::isfinite(to_outside[i]) ? -(std::sqrt(to_outside[i]) - half) : kFarInside;
    } else {
      f.sdf[i] = std::sqrt(to_inside[i]) - half;
    }
  }
  return f;
}

double sample_bilinear(const std::vector<double>& field, int nx, int ny, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(nx - 1));
  y = std::clamp(y, 0.0, static_cast<double>(ny - 1));
  const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(nx - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(ny - 2, 0));
  const int x1 = std::min(x0 + 1, nx - 1), y1 = std::min(y0 + 1, ny - 1);
  const double fx = x - x0, fy = y - y0;
  const auto v = [&](int i, int j) { return field[static_cast<std::size_t>(j) * nx + i]; };
  // Skip zero-weight taps so exact positions reproduce the field bit-for-bit.
  const double top = fx == 0.0 ? v(x0, y0) : v(x0, y0) * (1 - fx) + v(x1, y0) * fx;
  if (fy == 0.0) return top;
  const double bottom = fx == 0.0 ? v(x0, y1) : v(x0, y1) * (1 - fx) + v(x1, y1) * fx;
  return top * (1 - fy) + bottom * fy;
}

}  // namespace

LabelVolume complete_from_slices(std::span<const SliceAnnotation> annotations, const GridMeta& target,
                                 SliceProfile profile, Label label) {
  target.validate();
  if (!labels::is_registered(label) || label == labels::background) {
    throw ValidationError("completion label must be a foreground dictionary label");
  }
  if (annotations.size() < 2) {
    throw ValidationError(fmt::format("insufficient annotations: need at least 2, got {}", annotations.size()));
  }
  const int nx = target.dims[0], ny = target.dims[1], nz = target.dims[2];
  const std::size_t plane = static_cast<std::size_t>(nx) * ny;

  std::vector<const SliceAnnotation*> sorted;
  for (const auto& a : annotations) {
    if (a.slice_index < 0 || a.slice_index >= nz) {
      throw ValidationError(fmt::format("annotation slice {} is outside [0, {})", a.slice_index, nz));
    }
    if (a.mask2d.size() != plane) {
      throw ValidationError(fmt::format("annotation on slice {} has {} pixels, expected {}", a.slice_index,
                                        a.mask2d.size(), plane));
    }
    if (std::none_of(a.mask2d.begin(), a.mask2d.end(), [](std::uint8_t v) { return v != 0; })) {
      throw ValidationError(fmt::format("annotation on slice {} is empty", a.slice_index));
    }
    sorted.push_back(&a);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->slice_index < b->slice_index; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->slice_index == sorted[i - 1]->slice_index) {
      throw ValidationError(fmt::format("overlapping slice indices: slice {} annotated twice", sorted[i]->slice_index));
    }
  }

  std::vector<SliceField> fields;
  for (const auto* a : sorted) fields.push_back(make_field(*a, target));
  std::size_t widest = 0;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    if (fields[i].area > fields[widest].area) widest = i;
  }
  const bool tapered = profile == SliceProfile::tapered && fields.size() >= 3;
  const std::size_t last = fields.size() - 1;

  std::vector<Label> out(target.voxel_count(), labels::background);
  std::vector<double> blended(plane);
  for (std::size_t seg = 0; seg + 1 < fields.size(); ++seg) {
    const SliceField& a = fields[seg];
    const SliceField& b = fields[seg + 1];
    for (int z = a.slice; z <= b.slice; ++z) {
      Label* dst = out.data() + static_cast<std::size_t>(z) * plane;
      if (z == a.slice || z == b.slice) {
        const auto& src = (z == a.slice ? a : b).source->mask2d;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] ? label : labels::background;
        continue;
      }
      const double t = static_cast<double>(z - a.slice) / (b.slice - a.slice);
      double w = t;  // weight of b
      if (tapered && seg == 0 && seg + 1 == widest) {
        w = std::sqrt(t * (2.0 - t));
      } else if (tapered && seg == widest && seg + 1 == last) {
        w = 1.0 - std::sqrt(1.0 - t * t);
      }
      const double cx = (1 - w) * a.cx + w * b.cx;
      const double cy = (1 - w) * a.cy + w * b.cy;
      std::size_t best = 0;
      bool any = false;
      for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * nx + x;
          const double sa = sample_bilinear(a.sdf, nx, ny, x + a.cx - cx, y + a.cy - cy);
          const double sb = sample_bilinear(b.sdf, nx, ny, x + b.cx - cx, y + b.cy - cy);
          blended[i] = (1 - w) * sa + w * sb;
          if (blended[i] < 0.0) {
            dst[i] = label;
            any = true;
          }
          if (blended[i] < blended[best]) best = i;
        }
      }
      // The blend of two aligned shapes is never empty; guard sub-pixel slivers.
      if (!any) dst[best] = label;
    }
  }
  return LabelVolume(target, std::move(out));
}

std::vector<SliceAnnotation> annotations_from_volume(const LabelVolume& volume, Label label) {
  const GridMeta& meta = volume.meta();
  const std::size_t plane = static_cast<std::size_t>(meta.dims[0]) * meta.dims[1];
  std::vector<SliceAnnotation> out;
  for (int z = 0; z < meta.dims[2]; ++z) {
    SliceAnnotation a;
    a.slice_index = z;
    a.mask2d.resize(plane);
    bool any = false;
    for (std::size_t i = 0; i < plane; ++i) {
      a.mask2d[i] = volume[z * plane + i] == label ? 1 : 0;
      any = any || a.mask2d[i];
    }
    if (any) out.push_back(std::move(a));
  }
  return out;
}

}  // namespace mammoforge
