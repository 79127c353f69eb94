#include <doctest.h>

#include <cmath>
#include <random>

#include "mammoforge/error.hpp"
#include "mammoforge/slice_completion.hpp"
#include "test_support.hpp"

using namespace mammoforge;
using namespace mammoforge::testing;

namespace {

std::vector<std::uint8_t> disk(const GridMeta& m, double cx, double cy, double r) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(m.dims[0]) * m.dims[1], 0);
  for (int j = 0; j < m.dims[1]; ++j)
    for (int i = 0; i < m.dims[0]; ++i) {
      const double dx = (i - cx) * m.spacing.x(), dy = (j - cy) * m.spacing.y();
      out[static_cast<std::size_t>(j) * m.dims[0] + i] = dx * dx + dy * dy <= r * r;
    }
  return out;
}

std::size_t slice_count(const LabelVolume& v, int k, Label label) {
  std::size_t n = 0;
  for (int j = 0; j < v.meta().dims[1]; ++j)
    for (int i = 0; i < v.meta().dims[0]; ++i) n += v.at(i, j, k) == label;
  return n;
}

// Largest half-width along x through the slice centre row, in mm.
double radius_x(const LabelVolume& v, int k, int cj, double sx) {
  int lo = -1, hi = -1;
  for (int i = 0; i < v.meta().dims[0]; ++i) {
    if (v.at(i, cj, k) == 0) continue;
    if (lo < 0) lo = i;
    hi = i;
  }
  return lo < 0 ? 0.0 : 0.5 * (hi - lo + 1) * sx;
}

}  // namespace

TEST_CASE("identical disks complete to a cylinder") {
  const GridMeta m = make_grid({32, 32, 12});
  const auto d = disk(m, 15.5, 15.5, 6.0);
  const std::vector<SliceAnnotation> a{{2, d}, {9, d}};
  for (SliceProfile profile : {SliceProfile::linear, SliceProfile::tapered}) {
    const LabelVolume out = complete_from_slices(a, m, profile);
    for (int k = 2; k <= 9; ++k)
      for (int j = 0; j < 32; ++j)
        for (int i = 0; i < 32; ++i) CHECK(out.at(i, j, k) == (d[j * 32 + i] ? labels::lesion : 0));
    CHECK(slice_count(out, 0, labels::lesion) == 0);
    CHECK(slice_count(out, 11, labels::lesion) == 0);
  }
}

TEST_CASE("concentric disks interpolate the radius") {
  const GridMeta m = make_grid({40, 40, 11});
  const std::vector<SliceAnnotation> a{{0, disk(m, 20, 20, 4.0)}, {10, disk(m, 20, 20, 12.0)}};
  const LabelVolume out = complete_from_slices(a, m, SliceProfile::linear);
  CHECK(std::abs(radius_x(out, 5, 20, 1.0) - 8.0) <= 1.0);
  for (int k = 1; k < 10; ++k) {
    const double expected = 4.0 + 8.0 * k / 10.0;
    CHECK(std::abs(radius_x(out, k, 20, 1.0) - expected) <= 1.0);
  }
}

TEST_CASE("shifted disks follow the centroid") {
  const GridMeta m = make_grid({40, 24, 9});
  const std::vector<SliceAnnotation> a{{0, disk(m, 8, 12, 5.0)}, {8, disk(m, 30, 12, 5.0)}};
  const LabelVolume out = complete_from_slices(a, m, SliceProfile::linear);
  for (int k = 0; k <= 8; ++k) {
    double sx = 0;
    std::size_t n = 0;
    for (int j = 0; j < 24; ++j)
      for (int i = 0; i < 40; ++i)
        if (out.at(i, j, k)) sx += i, ++n;
    REQUIRE(n > 0);
    CHECK(std::abs(sx / n - (8.0 + 22.0 * k / 8.0)) <= 1.0);
  }
}

TEST_CASE("ellipsoid from top, middle and bottom slices") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const GridMeta m = make_grid({48, 48, 32}, Vec3(0.8, 0.8, 1.5));
    const Vec3 semi(6 + 8 * u(rng), 6 + 8 * u(rng), 8 + 10 * u(rng));
    const Vec3 centre(19.2, 19.2, 24.0);
    const LabelVolume truth = ellipsoid_mask(m, centre, semi, labels::lesion);
    std::vector<SliceAnnotation> all = annotations_from_volume(truth, labels::lesion);
    REQUIRE(all.size() >= 3);
    const std::vector<SliceAnnotation> sparse{all.front(), all[all.size() / 2], all.back()};
    const LabelVolume out = complete_from_slices(sparse, m);
    CAPTURE(trial);
    CHECK(oracle::dice(out, truth, {labels::lesion}) >= 0.90);
    for (const auto& s : sparse)
      for (std::size_t p = 0; p < s.mask2d.size(); ++p)
        CHECK(static_cast<bool>(out[static_cast<std::size_t>(s.slice_index) * s.mask2d.size() + p]) ==
              static_cast<bool>(s.mask2d[p]));
    for (int k = sparse.front().slice_index; k <= sparse.back().slice_index; ++k)
      CHECK(slice_count(out, k, labels::lesion) > 0);
  }
}

TEST_CASE("thin shapes keep every intermediate slice non-empty") {
  const GridMeta m = make_grid({20, 20, 15});
  std::vector<std::uint8_t> a(400, 0), b(400, 0);
  a[5 * 20 + 3] = 1;
  b[14 * 20 + 16] = 1;
  const LabelVolume out = complete_from_slices(std::vector<SliceAnnotation>{{0, a}, {14, b}}, m);
  for (int k = 0; k < 15; ++k) CHECK(slice_count(out, k, labels::lesion) > 0);
}

TEST_CASE("annotations_from_volume lists the labelled slices") {
  const GridMeta m = make_grid({6, 5, 7});
  std::vector<Label> v(m.voxel_count(), 0);
  v[m.index(1, 1, 2)] = labels::lesion;
  v[m.index(2, 3, 5)] = labels::lesion;
  v[m.index(2, 2, 6)] = labels::whole_breast;
  const auto a = annotations_from_volume(LabelVolume(m, v), labels::lesion);
  REQUIRE(a.size() == 2);
  CHECK(a[0].slice_index == 2);
  CHECK(a[1].slice_index == 5);
  CHECK(a[0].mask2d[1 * 6 + 1] != 0);
}

TEST_CASE("invalid annotations") {
  const GridMeta m = make_grid({10, 10, 6});
  const auto d = disk(m, 5, 5, 3);
  CHECK_THROWS_AS(complete_from_slices(std::vector<SliceAnnotation>{{1, d}}, m), ValidationError);
  CHECK_THROWS_AS(complete_from_slices(std::vector<SliceAnnotation>{}, m), ValidationError);
  CHECK_THROWS_AS(complete_from_slices(std::vector<SliceAnnotation>{{1, d}, {1, d}}, m), ValidationError);
  CHECK_THROWS_AS(complete_from_slices(std::vector<SliceAnnotation>{{1, d}, {4, std::vector<std::uint8_t>(100, 0)}}, m),
                  ValidationError);
  CHECK_THROWS_AS(complete_from_slices(std::vector<SliceAnnotation>{{1, d}, {4, std::vector<std::uint8_t>(99, 1)}}, m),
                  ValidationError);
  CHECK_THROWS_AS(complete_from_slices(std::vector<SliceAnnotation>{{1, d}, {6, d}}, m), ValidationError);
  try {
    complete_from_slices(std::vector<SliceAnnotation>{{1, d}}, m);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("insufficient annotations") != std::string::npos);
  }
}

TEST_CASE("completion is deterministic") {
  const GridMeta m = make_grid({30, 30, 10});
  const std::vector<SliceAnnotation> a{{0, disk(m, 10, 12, 4)}, {4, disk(m, 14, 15, 9)}, {9, disk(m, 16, 14, 3)}};
  CHECK(complete_from_slices(a, m) == complete_from_slices(a, m));
}
