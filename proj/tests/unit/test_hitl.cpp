#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <fmt/format.h>

#include "mammoforge/error.hpp"
#include "mammoforge/evaluation.hpp"
#include "mammoforge/hash.hpp"
#include "mammoforge/hitl.hpp"
#include "mammoforge/manifest.hpp"
#include "mammoforge/nifti.hpp"
#include "test_support.hpp"

using namespace mammoforge;
using namespace mammoforge::testing;
namespace fs = std::filesystem;

namespace {

const GridMeta kGrid = make_grid({12, 10, 6}, Vec3(0.8, 0.8, 2.0), Vec3(-4, -4, 0));

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Every file under the case directory, by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != ".lock") out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

LabelVolume anatomy_mask(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabelVolume m = ellipsoid_mask(kGrid, Vec3(4.4, 3.6, 5.0), Vec3(3.5, 3.0, 4.0), labels::whole_breast);
  auto d = m.copy_data();
  std::bernoulli_distribution gland(0.3);
  for (auto& v : d)
    if (v && gland(rng)) v = labels::fibroglandular;
  return m.with_data(d);
}

struct Fixture {
  TempDir tmp{"hitl"};
  CaseStore store{tmp / "store"};

  void add_case(const std::string& id, bool with_mask = true) {
    const fs::path img = tmp / (id + "_t1w.nii");
    std::vector<float> v(kGrid.voxel_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 17) / 17.0f;
    write_nifti(ImageVolume(kGrid, v), img);
    CaseManifest m;
    m.case_id = id;
    m.sequences = {{"t1w", img.string()}, {"dce", img.string()}};
    store.create_case(m);
    if (with_mask) store.store_mask(id, mask_keys::anatomy, anatomy_mask(id.size()), Actor::pipeline, "segment");
  }
};

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(fmt::format("case_{:03d}", i));
  return out;
}

}  // namespace

TEST_CASE("stages only move forward") {
  Fixture f;
  f.add_case("a", false);
  CHECK(f.store.stage("a") == Stage::ingested);
  CHECK(f.store.load("a").split == SplitRole::unassigned);
  for (Stage s : {Stage::preprocessed, Stage::registered, Stage::auto_segmented, Stage::revised, Stage::final_}) {
    f.store.advance_stage("a", s);
    CHECK(f.store.stage("a") == s);
  }
  CHECK_NOTHROW(f.store.advance_stage("a", Stage::final_));
  CHECK_THROWS_AS(f.store.advance_stage("a", Stage::registered), StateError);
  CHECK_THROWS_AS(f.add_case("a"), Error);
  for (Stage s : {Stage::ingested, Stage::revised, Stage::final_}) CHECK(stage_from_string(to_string(s)) == s);
  CHECK_THROWS(stage_from_string("nonsense"));
}

TEST_CASE("export writes image and mask on one grid") {
  Fixture f;
  f.add_case("a");
  const fs::path out = f.tmp / "out";
  export_for_revision(f.store, "a", out);
  const ImageVolume img = read_nifti_image(out / "a_img.nii");
  const LabelVolume mask = read_nifti_labels(out / "a_mask.nii");
  CHECK(same_grid(img.meta(), mask.meta()));
  CHECK(mask.data().size() == f.store.load_mask("a", mask_keys::anatomy).size());
  CHECK(std::equal(mask.data().begin(), mask.data().end(), f.store.load_mask("a", mask_keys::anatomy).data().begin()));
  const auto events = f.store.load("a").provenance;
  CHECK(events.back().action == "export_for_revision");
  CHECK_THROWS_AS(export_for_revision(f.store, "a", out, mask_keys::lesion), StateError);
}

TEST_CASE("unchanged revision round trip") {
  Fixture f;
  f.add_case("a");
  const std::string before = mask_hash(f.store.load_mask("a", mask_keys::anatomy));
  export_for_revision(f.store, "a", f.tmp / "out");
  const EditStats s = ingest_revision(f.store, "a", f.tmp / "out" / "a_mask.nii");
  CHECK(s.voxels_added == 0);
  CHECK(s.voxels_removed == 0);
  CHECK(s.dice_before_after == 1.0);
  CHECK(mask_hash(f.store.load_mask("a", mask_keys::anatomy)) == before);
  CHECK(f.store.stage("a") == Stage::revised);
  CHECK_FALSE(f.store.verify_provenance("a").has_value());
}

TEST_CASE("edit statistics of an added blob") {
  Fixture f;
  f.add_case("a");
  export_for_revision(f.store, "a", f.tmp / "out");
  LabelVolume m = read_nifti_labels(f.tmp / "out" / "a_mask.nii");
  auto d = m.copy_data();
  int added = 0;
  for (std::size_t i = 0; i < d.size() && added < 10; ++i)
    if (d[i] == 0) d[i] = labels::whole_breast, ++added;
  REQUIRE(added == 10);
  write_nifti(m.with_data(d), f.tmp / "edited.nii");
  const LabelVolume old = f.store.load_mask("a", mask_keys::anatomy);
  const EditStats s = ingest_revision(f.store, "a", f.tmp / "edited.nii");
  CHECK(s.voxels_added == 10);
  CHECK(s.voxels_removed == 0);
  CHECK(s.per_label.at(labels::whole_breast).added == 10);
  CHECK(s.dice_before_after == doctest::Approx(dice(old, f.store.load_mask("a", mask_keys::anatomy),
                                                     std::set<Label>{1, 2, 3})));
  const auto ev = f.store.load("a").provenance.back();
  CHECK(ev.actor == Actor::human);
  CHECK(ev.mask_hash_before == mask_hash(old));
  CHECK(ev.mask_hash_after == mask_hash(m.with_data(d)));
}

TEST_CASE("edit statistics against an oracle") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const LabelVolume a = random_mask(kGrid, 0.4, rng, 2), b = random_mask(kGrid, 0.4, rng, 1);
    const EditStats s = compute_edit_stats(a, b);
    std::size_t add = 0, rem = 0;
    for (std::size_t i = 0; i < a.size(); ++i) add += !a[i] && b[i], rem += a[i] && !b[i];
    CHECK(s.voxels_added == add);
    CHECK(s.voxels_removed == rem);
    CHECK(s.dice_before_after == doctest::Approx(oracle::dice(a, b, {1, 2, 3})));
  }
}

TEST_CASE("rejected revisions leave the store untouched") {
  Fixture f;
  f.add_case("a");
  const auto before = snapshot(f.store.case_dir("a"));
  write_nifti(LabelVolume::filled(make_grid({12, 10, 5}, Vec3(0.8, 0.8, 2.0), Vec3(-4, -4, 0)), 1),
              f.tmp / "small.nii");
  CHECK_THROWS_AS(ingest_revision(f.store, "a", f.tmp / "small.nii"), ValidationError);
  std::vector<float> bad(kGrid.voxel_count(), 7.0f);
  write_nifti(ImageVolume(kGrid, bad), f.tmp / "labels7.nii");
  CHECK_THROWS_AS(ingest_revision(f.store, "a", f.tmp / "labels7.nii"), ValidationError);
  CHECK(snapshot(f.store.case_dir("a")) == before);
  CHECK(f.store.stage("a") == Stage::ingested);
}

TEST_CASE("split arithmetic") {
  const auto s = compute_split(ids(120), 0.75, 42);
  CHECK(s.train.size() == 90);
  CHECK(s.test.size() == 30);
  std::set<std::string> all(s.train.begin(), s.train.end());
  for (const auto& id : s.test) CHECK(all.insert(id).second);
  CHECK(all.size() == 120);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(std::is_sorted(s.test.begin(), s.test.end()));

  auto shuffled = ids(120);
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(9));
  const auto again = compute_split(shuffled, 0.75, 42);
  CHECK(again.train == s.train);
  CHECK(compute_split(ids(120), 0.75, 43).train != s.train);

  const auto four = compute_split(ids(4), 0.75, 1);
  CHECK(four.train.size() == 3);
  CHECK(four.test.size() == 1);
  CHECK(compute_split(ids(1), 0.75, 1).train.size() == 1);
  CHECK_THROWS_AS(compute_split(ids(4), 1.5, 1), ValidationError);

  const auto parsed = split_from_json(split_to_json(s));
  CHECK(parsed.train == s.train);
  CHECK(parsed.test == s.test);
  CHECK(parsed.seed == 42);
}

TEST_CASE("split follows a Fisher-Yates oracle") {
  for (std::uint64_t seed : {0u, 7u, 123u}) {
    auto order = ids(37);
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    std::vector<std::string> train(order.begin(), order.begin() + 28);
    std::sort(train.begin(), train.end());
    CHECK(compute_split(ids(37), 0.75, seed).train == train);
  }
}

TEST_CASE("dataset split needs revised cases") {
  Fixture f;
  for (const auto& id : ids(4)) f.add_case(id);
  CHECK_THROWS_AS(split_dataset(f.store, 0.75, 3), StateError);
  for (const auto& id : ids(4)) {
    export_for_revision(f.store, id, f.tmp / "out");
    ingest_revision(f.store, id, f.tmp / "out" / (id + "_mask.nii"));
  }
  const auto s = split_dataset(f.store, 0.75, 3);
  CHECK(s.train.size() == 3);
  CHECK(f.store.load(s.test[0]).split == SplitRole::test);
  const std::string file = slurp(f.store.root() / kSplitFileName);
  CHECK_THROWS_AS(split_dataset(f.store, 0.75, 3), StateError);
  split_dataset(f.store, 0.75, 3, true);
  CHECK(slurp(f.store.root() / kSplitFileName) == file);
}

TEST_CASE("provenance hash chain detects tampering") {
  Fixture f;
  f.add_case("a");
  for (int i = 0; i < 5; ++i) f.store.store_mask("a", mask_keys::anatomy, anatomy_mask(100 + i), Actor::pipeline, "x");
  f.store.store_mask("a", mask_keys::fused, anatomy_mask(7), Actor::pipeline, "fuse");
  REQUIRE_FALSE(f.store.verify_provenance("a").has_value());
  const auto events = f.store.load("a").provenance;
  std::map<std::string, std::optional<std::string>> last;
  for (const auto& e : events) {
    if (e.action == "export_for_revision") continue;
    CHECK(e.mask_hash_before == last[e.mask]);
    last[e.mask] = e.mask_hash_after;
  }
  for (const auto& e : events) CHECK(provenance_from_json_line(provenance_to_json_line(e)) == e);

  const fs::path prov = f.store.case_dir("a") / "provenance.jsonl";
  const std::string original = slurp(prov);
  std::string tampered = original;
  const auto pos = tampered.find("sha256:", tampered.find('\n') + 1);
  tampered[pos + 7] = tampered[pos + 7] == '0' ? '1' : '0';
  std::ofstream(prov, std::ios::binary) << tampered;
  CHECK(f.store.verify_provenance("a").has_value());
  std::ofstream(prov, std::ios::binary) << original;
  CHECK_FALSE(f.store.verify_provenance("a").has_value());
  write_nifti(anatomy_mask(999), f.store.mask_path("a", mask_keys::anatomy));
  CHECK(f.store.verify_provenance("a").has_value());
}

TEST_CASE("failures inside a commit roll back every file") {
  for (const char* step : {"write_tmp", "journal", "backup", "install"}) {
    CAPTURE(std::string(step));
    Fixture f;
    f.add_case("a");
    export_for_revision(f.store, "a", f.tmp / "out");
    LabelVolume m = read_nifti_labels(f.tmp / "out" / "a_mask.nii");
    auto d = m.copy_data();
    std::fill(d.begin(), d.begin() + 20, labels::fibroglandular);
    write_nifti(m.with_data(d), f.tmp / "edited.nii");
    const auto before = snapshot(f.store.case_dir("a"));
    f.store.set_fault_hook([&](std::string_view s) {
      if (s == step) throw IoError("simulated failure");
    });
    CHECK_THROWS_AS(ingest_revision(f.store, "a", f.tmp / "edited.nii"), IoError);
    CHECK(snapshot(f.store.case_dir("a")) == before);
    f.store.set_fault_hook({});
    ingest_revision(f.store, "a", f.tmp / "edited.nii");
    CHECK(f.store.stage("a") == Stage::revised);
    CHECK_FALSE(f.store.verify_provenance("a").has_value());
  }
}

TEST_CASE("a crash inside a commit is rolled back by recovery") {
  for (const char* step : {"write_tmp", "journal", "backup", "install"}) {
    CAPTURE(std::string(step));
    Fixture f;
    f.add_case("a");
    const auto before = snapshot(f.store.case_dir("a"));
    const pid_t pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      f.store.set_fault_hook([&](std::string_view s) {
        if (s == step) ::_exit(0);
      });
      f.store.store_mask("a", mask_keys::anatomy, anatomy_mask(77), Actor::human, "edit");
      ::_exit(1);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    f.store.recover("a");
    CHECK(snapshot(f.store.case_dir("a")) == before);
    CHECK_FALSE(f.store.verify_provenance("a").has_value());
  }
}

TEST_CASE("archived revisions") {
  Fixture f;
  f.add_case("a");
  f.store.set_archive_revisions(true);
  const LabelVolume old = f.store.load_mask("a", mask_keys::anatomy);
  write_nifti(anatomy_mask(31), f.tmp / "edited.nii");
  ingest_revision(f.store, "a", f.tmp / "edited.nii");
  const fs::path archive = f.store.case_dir("a") / "archive";
  REQUIRE(fs::exists(archive));
  const auto first = *fs::directory_iterator(archive);
  CHECK(read_nifti_labels(first.path()) == old);
}

TEST_CASE("repeated revision cycles keep the chain intact") {
  Fixture f;
  f.add_case("a");
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    export_for_revision(f.store, "a", f.tmp / "out");
    LabelVolume m = read_nifti_labels(f.tmp / "out" / "a_mask.nii");
    auto d = m.copy_data();
    for (int k = 0; k < 5; ++k) d[rng() % d.size()] = static_cast<Label>(rng() % 3);
    write_nifti(m.with_data(d), f.tmp / "edited.nii");
    ingest_revision(f.store, "a", f.tmp / "edited.nii");
    CHECK(f.store.load_mask("a", mask_keys::anatomy) == m.with_data(d));
  }
  CHECK_FALSE(f.store.verify_provenance("a").has_value());
  CHECK(f.store.load("a").provenance.size() == 41);
}
