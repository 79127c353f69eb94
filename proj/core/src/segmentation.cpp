#include "mammoforge/segmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "mammoforge/components.hpp"
#include "mammoforge/error.hpp"
#include "mammoforge/preprocess.hpp"

namespace mammoforge {

double otsu_threshold(std::span<const float> values) {
  if (values.empty()) throw ValidationError("otsu threshold of an empty set");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) return mx;
  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  const double width = (mx - mn) / kBins;
  for (const float v : values) {
    const int b = std::min(kBins - 1, static_cast<int>((v - mn) / width));
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return mn + (best_bin + 1) * width;
}

LabelVolume segment_baseline_breast(const ImageVolume& t1w) {
  const GridMeta& meta = t1w.meta();
  const auto data = t1w.data();
  const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
  if (!(*mx > *mn)) throw ProcessingError("no anatomy detected");
  const double body_threshold = otsu_threshold(data);

  std::vector<Label> fg(t1w.size(), 0);
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = data[i] > body_threshold ? 1 : 0;

  // Anterior-posterior voxel axis: the one most aligned with world y (LPS: +y posterior).
  int ap = 0;
  for (int a = 1; a < 3; ++a) {
    if (std::abs(meta.direction(1, a)) > std::abs(meta.direction(1, ap))) ap = a;
  }
  const bool posterior_increasing = meta.direction(1, ap) > 0;
  const int n = meta.dims[ap];
  std::vector<double> fraction(n, 0.0);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    if (fg[i]) fraction[meta.unravel(i)[ap]] += 1.0;
  }
  const double plane_size = static_cast<double>(meta.voxel_count()) / n;
  for (auto& f : fraction) f /= plane_size;

  // Walk anterior -> posterior; the chest wall plane has the steepest rise.
  const auto plane_at = [&](int step) { return posterior_increasing ? step : n - 1 - step; };
  int chest_step = n;  // no chest wall found: keep everything
  double steepest = 0.0;
  for (int step = 1; step < n; ++step) {
    const double rise = fraction[plane_at(step)] - fraction[plane_at(step - 1)];
    if (rise > steepest) {
      steepest = rise;
      chest_step = step;
    }
  }
  for (std::size_t i = 0; i < fg.size(); ++i) {
    if (!fg[i]) continue;
    const int p = meta.unravel(i)[ap];
    const int step = posterior_increasing ? p : n - 1 - p;
    if (step >= chest_step) fg[i] = 0;
  }

  const auto components = connected_components(LabelVolume(meta, std::move(fg)), 1, Connectivity::six);
  if (components.empty()) throw ProcessingError("no anatomy detected");

  std::vector<Label> out(t1w.size(), labels::background);
  for (const auto i : components.front().voxels) out[i] = labels::whole_breast;

  // Dark tissue can fall below the body threshold; fill cavities that do not reach the grid border.
  std::vector<Label> outside(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) outside[i] = out[i] == labels::background ? 1 : 0;
  for (const auto& hole : connected_components(LabelVolume(meta, std::move(outside)), 1, Connectivity::six)) {
    const bool open = std::any_of(hole.voxels.begin(), hole.voxels.end(), [&](std::size_t i) {
      const Index3 p = meta.unravel(i);
      for (int a = 0; a < 3; ++a) {
        if (p[a] == 0 || p[a] == meta.dims[a] - 1) return true;
      }
      return false;
    });
    if (!open) {
      for (const auto i : hole.voxels) out[i] = labels::whole_breast;
    }
  }

  std::vector<float> breast_values;
  std::vector<std::size_t> interior;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != labels::whole_breast) continue;
    breast_values.push_back(data[i]);
    // Rim voxels mix skin and air; dark values there are not gland.
    const Index3 p = meta.unravel(i);
    bool rim = false;
    for (int a = 0; a < 3 && !rim; ++a) {
      for (int d = -1; d <= 1 && !rim; d += 2) {
        Index3 q = p;
        q[a] += d;
        rim = !meta.contains(q[0], q[1], q[2]) || out[meta.index(q[0], q[1], q[2])] == labels::background;
      }
    }
    if (!rim) interior.push_back(i);
  }
  const auto [bmn, bmx] = std::minmax_element(breast_values.begin(), breast_values.end());
  if (*bmx > *bmn) {
    const double tissue_threshold = otsu_threshold(breast_values);
    for (const auto i : interior) {
      if (data[i] <= tissue_threshold) out[i] = labels::fibroglandular;
    }
  }
  return LabelVolume(meta, std::move(out));
}

LabelVolume segment_baseline_lesion(const ImageVolume& dce, const Index3& seed, double threshold_delta) {
  const GridMeta& meta = dce.meta();
  if (!meta.contains(seed[0], seed[1], seed[2])) {
    throw ValidationError(fmt::format("seed ({}, {}, {}) is outside the volume", seed[0], seed[1], seed[2]));
  }
  if (!(threshold_delta >= 0.0)) throw ValidationError("threshold_delta must be >= 0");
  const double seed_value = dce.at(seed[0], seed[1], seed[2]);
  const double foreground = otsu_threshold(dce.data());
  if (!(seed_value > foreground)) {
    throw ValidationError(fmt::format("seed in background (intensity {:.4f} <= foreground threshold {:.4f})",
                                      seed_value, foreground));
  }

  std::vector<Label> out(dce.size(), labels::background);
  std::vector<std::size_t> stack{meta.index(seed[0], seed[1], seed[2])};
  out[stack.back()] = labels::lesion;
  while (!stack.empty()) {
    const Index3 p = meta.unravel(stack.back());
    stack.pop_back();
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = p[0] + dx, y = p[1] + dy, z = p[2] + dz;
          if (!meta.contains(x, y, z)) continue;
          const std::size_t n = meta.index(x, y, z);
          if (out[n] == labels::lesion) continue;
          if (std::abs(static_cast<double>(dce[n]) - seed_value) <= threshold_delta) {
            out[n] = labels::lesion;
            stack.push_back(n);
          }
        }
      }
    }
  }
  return LabelVolume(meta, std::move(out));
}

Index3 find_lesion_seed(const ImageVolume& dce) {
  const double sigma = 2.0 * dce.meta().spacing.maxCoeff();
  const ImageVolume smoothed = smooth_gaussian(dce, Vec3::Constant(sigma));
  const auto d = smoothed.data();
  const auto it = std::max_element(d.begin(), d.end());
  return dce.meta().unravel(static_cast<std::size_t>(std::distance(d.begin(), it)));
}

}  // namespace mammoforge
