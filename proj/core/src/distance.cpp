#include "mammoforge/distance.hpp"

#include <limits>

#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D lower envelope of parabolas f(q) + ((p - q) * h)^2 over finite f(q).
void transform_line(const double* f, double* d, int n, double h, std::vector<int>& v,
                    std::vector<double>& z) {
  int k = -1;
  const double h2 = h * h;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    while (k >= 0) {
      const int p = v[k];
      // Intersection of parabolas rooted at p and q, in index units.
      const double s = ((f[q] + h2 * q * q) - (f[p] + h2 * p * p)) / (2.0 * h2 * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : ((f[q] + h2 * q * q) - (f[v[k - 1]] + h2 * v[k - 1] * v[k - 1])) /
                                (2.0 * h2 * (q - v[k - 1]));
  }
  if (k < 0) {
    for (int p = 0; p < n; ++p) d[p] = kInf;
    return;
  }
  int j = 0;
  for (int p = 0; p < n; ++p) {
    while (j < k && z[j + 1] < p) ++j;
    const double delta = (p - v[j]) * h;
    d[p] = f[v[j]] + delta * delta;
  }
}

}  // namespace

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> features,
                                               const Index3& dims, const Vec3& spacing) {
  const std::size_t nx = dims[0], ny = dims[1], nz = dims[2];
  if (features.size() != nx * ny * nz) {
    throw ValidationError("distance transform: feature mask size does not match dims");
  }
  std::vector<double> dist(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) dist[i] = features[i] ? 0.0 : kInf;

  const std::size_t longest = std::max({nx, ny, nz});
  std::vector<double> line_in(longest), line_out(longest);
  std::vector<int> v(longest);
  std::vector<double> z(longest + 1);

  const std::size_t strides[3] = {1, nx, nx * ny};
  const std::size_t extents[3] = {nx, ny, nz};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = extents[axis];
    const std::size_t stride = strides[axis];
    // Iterate over every line parallel to `axis`.
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (std::size_t u = 0; u < extents[a1]; ++u) {
      for (std::size_t w = 0; w < extents[a2]; ++w) {
        const std::size_t base = u * strides[a1] + w * strides[a2];
        for (std::size_t p = 0; p < n; ++p) line_in[p] = dist[base + p * stride];
        transform_line(line_in.data(), line_out.data(), static_cast<int>(n), spacing[axis], v, z);
        for (std::size_t p = 0; p < n; ++p) dist[base + p * stride] = line_out[p];
      }
    }
  }
  return dist;
}

}  // namespace mammoforge
