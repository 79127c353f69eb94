#include "mammoforge/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include <fmt/format.h>

#include "mammoforge/error.hpp"
#include "mammoforge/nelder_mead.hpp"
#include "mammoforge/preprocess.hpp"
#include "mammoforge/resample.hpp"

namespace mammoforge {
namespace {

constexpr double kAngleScale = 100.0;
constexpr double kInvalidCost = 1e30;

struct Sample {
  Vec3 world;
  double value;
};

// Pre-drawn fixed-image samples plus a moving image to compare them against.
class SimilarityEvaluator {
 public:
  SimilarityEvaluator(const ImageVolume& fixed, const ImageVolume& moving, Metric metric,
                      double sample_fraction, std::uint64_t seed)
      : moving_(moving), metric_(metric) {
    std::mt19937_64 engine(seed);
    const GridMeta& meta = fixed.meta();
    std::size_t n = 0;
    for (int k = 0; k < meta.dims[2]; ++k) {
      for (int j = 0; j < meta.dims[1]; ++j) {
        for (int i = 0; i < meta.dims[0]; ++i, ++n) {
          const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
          if (sample_fraction < 1.0 && u >= sample_fraction) continue;
          samples_.push_back({voxel_to_world(meta, Vec3(i, j, k)), fixed[n]});
        }
      }
    }
    const auto [fmin, fmax] = std::minmax_element(fixed.data().begin(), fixed.data().end());
    const auto [mmin, mmax] = std::minmax_element(moving.data().begin(), moving.data().end());
    fixed_range_ = {*fmin, *fmax};
    moving_range_ = {*mmin, *mmax};
  }

  /// nullopt when too few samples overlap.
  std::optional<double> operator()(const RigidTransform& xform) const {
    const RigidTransform inv = xform.inverse();
    const Mat3 r = inv.rotation();
    const Vec3 shift = inv.center + inv.translation;
    const GridMeta& mm = moving_.meta();
    const Mat3 to_index = mm.spacing.cwiseInverse().asDiagonal() * mm.direction.transpose();

    pairs_.clear();
    for (const auto& s : samples_) {
      const Vec3 q = r * (s.world - inv.center) + shift;
      const auto value = sample_trilinear(moving_, to_index * (q - mm.origin));
      if (value) pairs_.emplace_back(s.value, *value);
    }
    if (pairs_.size() < kMinOverlapSamples) return std::nullopt;
    return metric_ == Metric::ncc ? ncc() : mutual_information();
  }

 private:
  double ncc() const {
    const double n = static_cast<double>(pairs_.size());
    double sa = 0, sb = 0;
    for (const auto& [a, b] : pairs_) {
      sa += a;
      sb += b;
    }
    const double ma = sa / n, mb = sb / n;
    double cab = 0, caa = 0, cbb = 0;
    for (const auto& [a, b] : pairs_) {
      cab += (a - ma) * (b - mb);
      caa += (a - ma) * (a - ma);
      cbb += (b - mb) * (b - mb);
    }
    if (caa <= 0.0 || cbb <= 0.0) return 0.0;
    return std::clamp(cab / std::sqrt(caa * cbb), -1.0, 1.0);
  }

  // Joint histogram with linear (partial-volume) bin assignment on both axes.
  double mutual_information() const {
    constexpr int kBins = kMutualInformationBins;
    const auto bin = [](double v, std::pair<double, double> range, int& b0, double& frac) {
      const double span = range.second - range.first;
      const double x = span > 0 ? (v - range.first) / span * (kBins - 1) : 0.0;
      const double c = std::clamp(x, 0.0, static_cast<double>(kBins - 1));
      b0 = std::min(static_cast<int>(std::floor(c)), kBins - 2);
      frac = c - b0;
    };
    std::vector<double> joint(kBins * kBins, 0.0);
    for (const auto& [a, b] : pairs_) {
      int ia, ib;
      double fa, fb;
      bin(a, fixed_range_, ia, fa);
      bin(b, moving_range_, ib, fb);
      joint[ia * kBins + ib] += (1 - fa) * (1 - fb);
      joint[(ia + 1) * kBins + ib] += fa * (1 - fb);
      joint[ia * kBins + ib + 1] += (1 - fa) * fb;
      joint[(ia + 1) * kBins + ib + 1] += fa * fb;
    }
    const double total = static_cast<double>(pairs_.size());
    std::vector<double> pa(kBins, 0.0), pb(kBins, 0.0);
    for (int i = 0; i < kBins; ++i) {
      for (int j = 0; j < kBins; ++j) {
        const double p = joint[i * kBins + j] / total;
        joint[i * kBins + j] = p;
        pa[i] += p;
        pb[j] += p;
      }
    }
    double mi = 0.0;
    for (int i = 0; i < kBins; ++i) {
      for (int j = 0; j < kBins; ++j) {
        const double p = joint[i * kBins + j];
        if (p > 0.0) mi += p * std::log(p / (pa[i] * pb[j]));
      }
    }
    return mi;
  }

  const ImageVolume& moving_;
  Metric metric_;
  std::vector<Sample> samples_;
  std::pair<double, double> fixed_range_, moving_range_;
  mutable std::vector<std::pair<double, double>> pairs_;
};

RigidTransform params_to_transform(const Eigen::VectorXd& x, const Vec3& center) {
  RigidTransform t;
  t.angles = Vec3(x[0], x[1], x[2]) / kAngleScale;
  t.translation = Vec3(x[3], x[4], x[5]);
  t.center = center;
  return t;
}

ImageVolume pyramid_level(const ImageVolume& vol, int factor) {
  if (factor == 1) return vol;
  const GridMeta& meta = vol.meta();
  const ImageVolume smoothed = smooth_gaussian(vol, meta.spacing * (0.5 * factor));
  return resample_scalar(smoothed, downsampled_grid(meta, factor), RigidTransform::identity(),
                         Interpolation::trilinear);
}

}  // namespace

void RegistrationConfig::validate() const {
  if (pyramid_levels < 1) throw ValidationError("registration pyramid_levels must be >= 1");
  if (max_iters_per_level < 1) throw ValidationError("registration max_iters_per_level must be >= 1");
  if (!(param_tolerance > 0.0)) throw ValidationError("registration param_tolerance must be > 0");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ValidationError("registration sample_fraction must lie in (0, 1]");
  }
}

GridMeta downsampled_grid(const GridMeta& meta, int factor) {
  GridMeta out = meta;
  Vec3 first;
  for (int a = 0; a < 3; ++a) {
    const int n = std::max(1, (meta.dims[a] + factor - 1) / factor);
    const int f = meta.dims[a] > 1 ? factor : 1;
    out.dims[a] = n;
    out.spacing[a] = meta.spacing[a] * f;
    first[a] = meta.dims[a] > 1 ? 0.5 * (f - 1) : 0.0;
  }
  out.origin = voxel_to_world(meta, first);
  return out;
}

double similarity(const ImageVolume& fixed, const ImageVolume& moving, const RigidTransform& xform,
                  Metric metric, double sample_fraction, std::uint64_t seed) {
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ValidationError("sample_fraction must lie in (0, 1]");
  }
  const SimilarityEvaluator eval(fixed, moving, metric, sample_fraction, seed);
  const auto value = eval(xform);
  if (!value) throw ProcessingError("insufficient overlap between fixed and moving volumes");
  return *value;
}

RegistrationResult register_rigid(const ImageVolume& fixed, const ImageVolume& moving,
                                  const RegistrationConfig& config) {
  config.validate();
  const Vec3 center = fixed.meta().center();
  RegistrationResult result;
  Eigen::VectorXd params = Eigen::VectorXd::Zero(6);

  for (int level = config.pyramid_levels - 1; level >= 0; --level) {
    const int factor = 1 << level;
    const ImageVolume fixed_level = pyramid_level(fixed, factor);
    const ImageVolume moving_level = pyramid_level(moving, factor);
    const SimilarityEvaluator eval(fixed_level, moving_level, config.metric, config.sample_fraction,
                                   config.seed + static_cast<std::uint64_t>(level));
    if (!eval(params_to_transform(params, center))) {
      throw RegistrationError("insufficient overlap between fixed and moving volumes", level);
    }
    const auto cost = [&](const Eigen::VectorXd& x) {
      const auto value = eval(params_to_transform(x, center));
      return value ? -*value : kInvalidCost;
    };

    NelderMeadOptions options;
    options.tolerance = config.param_tolerance * std::pow(4.0, level);
    int remaining = config.max_iters_per_level;
    double step = 1.0 * factor;
    double best = cost(params);
    bool converged = false;
    // Restart from the best vertex until a restart brings no improvement.
    for (int run = 0; run < 3 && remaining > 0; ++run) {
      options.max_iterations = remaining;
      const auto nm = nelder_mead(cost, params, Eigen::VectorXd::Constant(6, step), options);
      remaining -= nm.iterations;
      converged = nm.converged;
      const bool improved = nm.value < best - 1e-12;
      if (nm.value <= best) {
        params = nm.best;
        best = nm.value;
      }
      if (!improved) break;
      step = std::max(step * 0.5, 10.0 * options.tolerance);
    }
    result.iterations_used.push_back(config.max_iters_per_level - remaining);
    if (level == 0) {
      result.converged = converged;
      result.final_metric = -best;
    }
  }
  result.transform = params_to_transform(params, center);
  return result;
}

}  // namespace mammoforge
