#include <doctest.h>

#include <cmath>
#include <random>

#include "mammoforge/error.hpp"
#include "mammoforge/evaluation.hpp"
#include "test_support.hpp"

using namespace mammoforge;
using namespace mammoforge::testing;

namespace {

LabelVolume box(const GridMeta& m, Index3 lo, Index3 hi, Label label = labels::lesion) {
  std::vector<Label> v(m.voxel_count(), 0);
  for (int k = lo[2]; k <= hi[2]; ++k)
    for (int j = lo[1]; j <= hi[1]; ++j)
      for (int i = lo[0]; i <= hi[0]; ++i) v[m.index(i, j, k)] = label;
  return LabelVolume(m, std::move(v));
}

LabelVolume from_bits(const GridMeta& m, std::uint64_t bits) {
  std::vector<Label> v(m.voxel_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (bits >> i) & 1u ? labels::lesion : 0;
  return LabelVolume(m, std::move(v));
}

}  // namespace

TEST_CASE("dice examples") {
  const GridMeta m = make_grid({4, 4, 1});
  const LabelVolume a = from_bits(m, 0b0000'0000'0000'1111);
  CHECK(dice(a, a, labels::lesion) == 1.0);
  CHECK(dice(a, from_bits(m, 0b1111'0000'0000'0000), labels::lesion) == 0.0);
  CHECK(dice(a, from_bits(m, 0b0000'0000'0011'1100), labels::lesion) == 0.5);
  CHECK(dice(from_bits(m, 0), from_bits(m, 0), labels::lesion) == 1.0);
  CHECK(dice(a, from_bits(m, 0), labels::lesion) == 0.0);
  CHECK_THROWS_AS(dice(a, LabelVolume::filled(make_grid({4, 4, 2}), 0), labels::lesion), ValidationError);
}

TEST_CASE("nsd examples") {
  const GridMeta m = make_grid({60, 6, 6});
  const LabelVolume a = box(m, {1, 1, 1}, {2, 2, 2});
  const LabelVolume b = box(m, {51, 1, 1}, {52, 2, 2});
  CHECK(nsd(a, a, labels::lesion, 2.0) == 1.0);
  CHECK(nsd(a, b, labels::lesion, 2.0) == 0.0);
  CHECK(nsd(a, LabelVolume::filled(m, 0), labels::lesion, 2.0) == 0.0);
  CHECK(nsd(LabelVolume::filled(m, 0), LabelVolume::filled(m, 0), labels::lesion, 2.0) == 1.0);
  CHECK_THROWS_AS(nsd(a, a, labels::lesion, 0.0), ValidationError);
  CHECK_THROWS_AS(nsd(a, LabelVolume::filled(make_grid({60, 6, 5}), 0), labels::lesion, 2.0), ValidationError);
}

TEST_CASE("shifted cube matches the all-pairs oracle") {
  const GridMeta m = make_grid({14, 12, 12});
  const LabelVolume a = box(m, {1, 1, 1}, {10, 10, 10});
  const LabelVolume b = box(m, {2, 1, 1}, {11, 10, 10});
  for (double tau : {0.5, 1.0, 2.0}) CHECK(nsd(a, b, labels::lesion, tau) == oracle::nsd(a, b, {labels::lesion}, tau));
  CHECK(nsd(a, b, labels::lesion, 2.0) == 1.0);
  CHECK(nsd(a, b, labels::lesion, 0.5) < 1.0);
  CHECK(dice(a, b, labels::lesion) == 0.9);
}

TEST_CASE("boundary definition") {
  const GridMeta m = make_grid({5, 5, 5});
  const LabelVolume a = box(m, {0, 0, 0}, {4, 4, 4});
  std::vector<std::uint8_t> ind(m.voxel_count(), 1);
  const auto b = boundary_of(ind, m.dims);
  std::size_t n = 0;
  for (auto x : b) n += x;
  CHECK(n == 125 - 27);
  CHECK(oracle::boundary(a, {labels::lesion}).size() == n);
}

TEST_CASE("exhaustive small grids") {
  const GridMeta m = make_grid({2, 2, 2});
  for (std::uint64_t x = 0; x < 256; x += 3)
    for (std::uint64_t y = 0; y < 256; y += 5) {
      const LabelVolume a = from_bits(m, x), b = from_bits(m, y);
      CHECK(dice(a, b, labels::lesion) == oracle::dice(a, b, {labels::lesion}));
      CHECK(nsd(a, b, labels::lesion, 1.0) == oracle::nsd(a, b, {labels::lesion}, 1.0));
      CHECK(nsd(a, b, labels::lesion, 0.5) == oracle::nsd(a, b, {labels::lesion}, 0.5));
    }
}

TEST_CASE("random masks against oracles") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 12; ++t) {
    const GridMeta m = t < 8 ? random_grid(rng, 8) : make_grid({16, 16, 16});
    const double fill = 0.1 + 0.08 * t;
    const LabelVolume a = random_mask(m, fill, rng, labels::lesion);
    const LabelVolume b = random_mask(m, 1.0 - fill, rng, labels::lesion);
    CAPTURE(t);
    CHECK(dice(a, b, labels::lesion) == oracle::dice(a, b, {labels::lesion}));
    CHECK(dice(a, b, labels::lesion) == dice(b, a, labels::lesion));
    CHECK(nsd(a, b, labels::lesion, 2.0) == nsd(b, a, labels::lesion, 2.0));
    for (double tau : {0.8, 2.0, 3.5}) CHECK(nsd(a, b, labels::lesion, tau) == oracle::nsd(a, b, {labels::lesion}, tau));
    double prev = 0.0;
    for (double tau : {0.1, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0}) {
      const double v = nsd(a, b, labels::lesion, tau);
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("anisotropic spacing uses physical distances") {
  const GridMeta m = make_grid({12, 12, 8}, Vec3(0.5, 0.5, 3.0));
  const LabelVolume a = box(m, {2, 2, 2}, {8, 8, 4});
  const LabelVolume b = box(m, {2, 2, 3}, {8, 8, 5});
  // one slice along z is 3 mm: outside a 2 mm tolerance, inside 3 mm
  CHECK(nsd(a, b, labels::lesion, 3.0) == 1.0);
  CHECK(nsd(a, b, labels::lesion, 2.0) < 1.0);
  CHECK(nsd(a, b, labels::lesion, 2.0) == oracle::nsd(a, b, {labels::lesion}, 2.0));
  const LabelVolume c = box(m, {4, 2, 2}, {10, 8, 4});
  CHECK(nsd(a, c, labels::lesion, 1.0) == 1.0);
}

TEST_CASE("label sets") {
  std::mt19937_64 rng(4);
  const GridMeta m = make_grid({8, 8, 8});
  auto d1 = random_mask(m, 0.5, rng, 1).copy_data(), d2 = random_mask(m, 0.5, rng, 2).copy_data();
  for (std::size_t i = 0; i < d1.size(); ++i)
    if (rng() % 3 == 0) d1[i] = 3;
  const LabelVolume a(m, d1), b(m, d2);
  for (const auto& s : default_structures()) {
    CAPTURE(s.name);
    CHECK(dice(a, b, s.labels) == oracle::dice(a, b, s.labels));
    CHECK(nsd(a, b, s.labels, 2.0) == oracle::nsd(a, b, s.labels, 2.0));
  }
  CHECK(default_structures().size() == 3);
  CHECK(default_structures()[0].labels == std::set<Label>{1, 2, 3});
}

TEST_CASE("aggregation") {
  const auto [mean, sd] = mean_and_sd({0.8, 1.0});
  CHECK(mean == doctest::Approx(0.9));
  CHECK(sd == doctest::Approx(0.1414).epsilon(1e-3));
  const auto single = mean_and_sd({0.7});
  CHECK(single.first == doctest::Approx(0.7));
  CHECK(single.second == 0.0);

  const GridMeta m = make_grid({4, 4, 1});
  const LabelVolume a = from_bits(m, 0b1111);
  const MetricReport one = evaluate_cohort({{"c1", a, a}}, {{"lesion", {labels::lesion}}});
  CHECK(one.aggregate.at("lesion").dice_mean == 1.0);
  CHECK(one.aggregate.at("lesion").dice_sd == 0.0);
  CHECK(one.aggregate.at("lesion").n_cases == 1);

  // dice 0.8 (|A|=5,|B|=5,overlap 4) and 1.0
  const LabelVolume p = from_bits(m, 0b11111), t = from_bits(m, 0b101111);
  const MetricReport two = evaluate_cohort({{"c2", a, a}, {"c1", p, t}}, {{"lesion", {labels::lesion}}});
  CHECK(two.per_case.at("c1").at("lesion").dice == doctest::Approx(0.8));
  CHECK(two.aggregate.at("lesion").dice_mean == doctest::Approx(0.9));
  CHECK(two.aggregate.at("lesion").dice_sd == doctest::Approx(std::sqrt(0.02)));
  const auto again = aggregate_metrics(two);
  CHECK(again.at("lesion").dice_mean == two.aggregate.at("lesion").dice_mean);
}

TEST_CASE("report rendering") {
  const GridMeta m = make_grid({4, 4, 1});
  const LabelVolume a = from_bits(m, 0b1111);
  const MetricReport r = evaluate_cohort({{"c1", a, a}}, default_structures());
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("structure,dice_mean,dice_sd,nsd_mean,nsd_sd,tau_mm,n_cases\n", 0) == 0);
  CHECK(csv.find("\nwhole_breast,1.000000,0.000000,1.000000,0.000000,2,1\n") != std::string::npos);
  CHECK(csv.find("fibroglandular,1.000000") != std::string::npos);
  CHECK(r.per_case.at("c1").at("fibroglandular").both_empty);
  CHECK(r.aggregate.at("fibroglandular").n_both_empty == 1);
  const std::string text = r.to_text();
  CHECK(text.find("NSD@2mm") != std::string::npos);
  CHECK(text.find("both-empty") != std::string::npos);
  CHECK(text.find("lesion") != std::string::npos);
}

TEST_CASE("cohort errors name the case") {
  const LabelVolume a = LabelVolume::filled(make_grid({4, 4, 1}), 0);
  const LabelVolume b = LabelVolume::filled(make_grid({4, 4, 2}), 0);
  CHECK_THROWS_AS(evaluate_cohort({}, default_structures()), ValidationError);
  try {
    evaluate_cohort({{"ok", a, a}, {"broken_case", a, b}}, default_structures());
    FAIL("expected grid mismatch");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("broken_case") != std::string::npos);
  }
}
