#include "mammoforge/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_vox)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma_vox * sigma_vox));
    sum += k[i + radius];
  }
  for (auto& w : k) w /= sum;
  return k;
}

void convolve_axis(std::vector<double>& data, const Index3& dims, int axis, const std::vector<double>& kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const std::size_t strides[3] = {1, static_cast<std::size_t>(dims[0]),
                                  static_cast<std::size_t>(dims[0]) * dims[1]};
  const int n = dims[axis];
  const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
  std::vector<double> line(n), out(n);
  for (int u = 0; u < dims[a1]; ++u) {
    for (int w = 0; w < dims[a2]; ++w) {
      const std::size_t base = u * strides[a1] + w * strides[a2];
      for (int p = 0; p < n; ++p) line[p] = data[base + p * strides[axis]];
      for (int p = 0; p < n; ++p) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          const int q = std::clamp(p + t, 0, n - 1);
          acc += kernel[t + radius] * line[q];
        }
        out[p] = acc;
      }
      for (int p = 0; p < n; ++p) data[base + p * strides[axis]] = out[p];
    }
  }
}

}  // namespace

void WindowSpec::validate() const {
  if (!(high > low) || !std::isfinite(low) || !std::isfinite(high)) {
    throw ValidationError(fmt::format("window high ({}) must exceed low ({})", high, low));
  }
}

ImageVolume smooth_gaussian(const ImageVolume& vol, const Vec3& sigma_mm) {
  const GridMeta& meta = vol.meta();
  std::vector<double> data(vol.data().begin(), vol.data().end());
  for (int axis = 0; axis < 3; ++axis) {
    if (!(sigma_mm[axis] > 0.0) || meta.dims[axis] == 1) continue;
    convolve_axis(data, meta.dims, axis, gaussian_kernel(sigma_mm[axis] / meta.spacing[axis]));
  }
  std::vector<float> out(data.size());
  std::transform(data.begin(), data.end(), out.begin(), [](double v) { return static_cast<float>(v); });
  return vol.with_data(std::move(out));
}

ImageVolume denoise_gaussian(const ImageVolume& vol, double sigma_mm) {
  if (!(sigma_mm > 0.0)) throw ValidationError(fmt::format("sigma_mm must be > 0 (got {})", sigma_mm));
  return smooth_gaussian(vol, Vec3::Constant(sigma_mm));
}

double percentile(std::span<const float> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  std::vector<float> sorted(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  std::nth_element(sorted.begin(), sorted.begin() + lo, sorted.end());
  const double a = sorted[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(sorted.begin() + lo + 1, sorted.end());
  return a + (pos - lo) * (b - a);
}

NormalizeResult normalize_percentile(const ImageVolume& vol, double p_low, double p_high) {
  if (!(p_low >= 0.0 && p_low < p_high && p_high <= 100.0)) {
    throw ValidationError(fmt::format("percentiles must satisfy 0 <= low < high <= 100 (got {}, {})", p_low, p_high));
  }
  const double lo = percentile(vol.data(), p_low);
  const double hi = percentile(vol.data(), p_high);
  if (!(hi > lo)) {
    return {ImageVolume::filled(vol.meta(), 0.0f), true};
  }
  std::vector<float> out(vol.size());
  const double range = hi - lo;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(std::clamp((vol[i] - lo) / range, 0.0, 1.0));
  }
  return {vol.with_data(std::move(out)), false};
}

ImageVolume apply_window(const ImageVolume& vol, const WindowSpec& window) {
  window.validate();
  std::vector<float> out(vol.size());
  const double range = window.high - window.low;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(std::clamp((vol[i] - window.low) / range, 0.0, 1.0));
  }
  return vol.with_data(std::move(out));
}

}  // namespace mammoforge
