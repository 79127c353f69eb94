#include "mammoforge/grid.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mammoforge/error.hpp"

namespace mammoforge {

Vec3 GridMeta::center() const {
  const Vec3 mid((dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0, (dims[2] - 1) / 2.0);
  return voxel_to_world(*this, mid);
}

void GridMeta::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) {
      throw ValidationError(fmt::format("grid dimension {} must be >= 1 (got {})", a, dims[a]));
    }
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw ValidationError(fmt::format("grid spacing {} must be > 0 (got {})", a, spacing[a]));
    }
    if (!std::isfinite(origin[a])) {
      throw ValidationError("grid origin must be finite");
    }
  }
  constexpr double tol = 1e-6;
  for (int c = 0; c < 3; ++c) {
    if (std::abs(direction.col(c).norm() - 1.0) > tol) {
      throw ValidationError(fmt::format("direction column {} is not unit length", c));
    }
    for (int d = c + 1; d < 3; ++d) {
      if (std::abs(direction.col(c).dot(direction.col(d))) > tol) {
        throw ValidationError(fmt::format("direction columns {} and {} are not orthogonal", c, d));
      }
    }
  }
}

Vec3 voxel_to_world(const GridMeta& meta, const Vec3& index) {
  return meta.origin + meta.direction * meta.spacing.cwiseProduct(index);
}

Vec3 world_to_voxel(const GridMeta& meta, const Vec3& world) {
  return (meta.direction.transpose() * (world - meta.origin)).cwiseQuotient(meta.spacing);
}

bool same_grid(const GridMeta& a, const GridMeta& b, double tolerance) {
  if (a.dims != b.dims) return false;
  return (a.spacing - b.spacing).cwiseAbs().maxCoeff() <= tolerance &&
         (a.origin - b.origin).cwiseAbs().maxCoeff() <= tolerance * std::max(1.0, a.origin.cwiseAbs().maxCoeff()) &&
         (a.direction - b.direction).cwiseAbs().maxCoeff() <= tolerance;
}

}  // namespace mammoforge
