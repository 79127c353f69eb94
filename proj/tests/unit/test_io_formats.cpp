#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "mammoforge/dicom.hpp"
#include "mammoforge/error.hpp"
#include "mammoforge/manifest.hpp"
#include "mammoforge/nifti.hpp"
#include "mammoforge/transform_io.hpp"
#include "test_support.hpp"

using namespace mammoforge;
using namespace mammoforge::testing;
namespace fs = std::filesystem;

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof(T));
}

// Hand-built NIfTI-1 file: uint8 voxels, sform = diag(spacing) in RAS, no intent.
std::vector<std::uint8_t> reference_uint8_nifti(const Index3& dims, const Vec3& spacing,
                                                const std::vector<std::uint8_t>& voxels) {
  std::vector<std::uint8_t> b(352, 0);
  put<std::int32_t>(b, 0, 348);
  put<std::int16_t>(b, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(b, 42 + 2 * a, static_cast<std::int16_t>(dims[a]));
  for (int a = 3; a < 7; ++a) put<std::int16_t>(b, 42 + 2 * a, 1);
  put<std::int16_t>(b, 70, 2);  // DT_UNSIGNED_CHAR
  put<std::int16_t>(b, 72, 8);
  put<float>(b, 76, 1.0f);
  for (int a = 0; a < 3; ++a) put<float>(b, 80 + 4 * a, static_cast<float>(spacing[a]));
  put<float>(b, 108, 352.0f);
  put<std::int16_t>(b, 254, 1);  // sform_code
  for (int r = 0; r < 3; ++r) put<float>(b, 280 + 16 * r + 4 * r, static_cast<float>(spacing[r]));
  std::memcpy(b.data() + 344, "n+1\0", 4);
  b.insert(b.end(), voxels.begin(), voxels.end());
  return b;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

double max_rel_diff(const Vec3& a, const Vec3& b) {
  return ((a - b).cwiseAbs().array() / b.cwiseAbs().array().max(1.0)).maxCoeff();
}

}  // namespace

TEST_CASE("nifti round trip of float images") {
  TempDir dir("nifti");
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(100.f, 40.f);
  for (int t = 0; t < 20; ++t) {
    const GridMeta m = random_grid(rng, 9);
    std::vector<float> d(m.voxel_count());
    for (auto& v : d) v = n(rng);
    const ImageVolume src(m, d);
    const fs::path p = dir / (t % 2 ? "a.nii" : "a.nii.gz");
    write_nifti(src, p);
    const ImageVolume back = read_nifti_image(p);
    CHECK(back.meta().dims == m.dims);
    CHECK(std::equal(back.data().begin(), back.data().end(), src.data().begin()));
    CHECK(max_rel_diff(back.meta().spacing, m.spacing) < 1e-6);
    CHECK(max_rel_diff(back.meta().origin, m.origin) < 1e-6);
    CHECK((back.meta().direction - m.direction).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(same_grid(back.meta(), m));
  }
}

TEST_CASE("nifti round trip of label maps") {
  TempDir dir("nifti");
  std::mt19937_64 rng(2);
  const GridMeta m = make_grid({7, 6, 5}, Vec3(0.7, 0.8, 2.5), Vec3(-10, 20, 30));
  std::uniform_int_distribution<int> l(0, 3);
  std::vector<Label> d(m.voxel_count());
  for (auto& v : d) v = static_cast<Label>(l(rng));
  const LabelVolume src(m, d);
  write_nifti(src, dir / "m.nii");
  const AnyVolume any = read_nifti(dir / "m.nii");
  REQUIRE(std::holds_alternative<LabelVolume>(any));
  const auto& back = std::get<LabelVolume>(any);
  CHECK(std::equal(back.data().begin(), back.data().end(), src.data().begin()));
}

TEST_CASE("external uint8 label file") {
  TempDir dir("nifti");
  const Index3 dims{3, 2, 2};
  std::vector<std::uint8_t> vox = {0, 1, 2, 2, 1, 0, 0, 0, 1, 1, 2, 0};
  write_bytes(dir / "ext.nii", reference_uint8_nifti(dims, Vec3(1.5, 2, 3), vox));
  const LabelVolume v = read_nifti_labels(dir / "ext.nii");
  std::set<Label> seen(v.data().begin(), v.data().end());
  CHECK(seen == std::set<Label>{0, 1, 2});
  // voxels are x-fastest on disk
  CHECK(v.at(1, 0, 0) == 1);
  CHECK(v.at(0, 1, 0) == 2);
  CHECK(v.at(2, 1, 1) == 0);
  CHECK(v.at(0, 1, 1) == 1);
  CHECK((v.meta().spacing - Vec3(1.5, 2, 3)).norm() < 1e-9);
  // RAS on disk, LPS in memory
  CHECK((v.meta().direction - Vec3(-1, -1, 1).asDiagonal().toDenseMatrix()).norm() < 1e-12);

  vox[4] = 9;
  write_bytes(dir / "bad.nii", reference_uint8_nifti(dims, Vec3(1, 1, 1), vox));
  CHECK_THROWS_AS(read_nifti_labels(dir / "bad.nii"), ValidationError);
}

TEST_CASE("nifti rejects malformed files") {
  TempDir dir("nifti");
  const ImageVolume v = ImageVolume::filled(make_grid({4, 4, 4}), 1.0f);
  auto bytes = encode_nifti(v);
  SUBCASE("truncated data") {
    auto cut = bytes;
    cut.resize(cut.size() - 5);
    CHECK_THROWS_AS(decode_nifti(cut), FormatError);
  }
  SUBCASE("truncated header") {
    auto cut = bytes;
    cut.resize(200);
    CHECK_THROWS_AS(decode_nifti(cut), FormatError);
  }
  SUBCASE("bad magic") {
    bytes[344] = 'x';
    CHECK_THROWS_AS(decode_nifti(bytes), FormatError);
  }
  SUBCASE("unsupported datatype") {
    put<std::int16_t>(bytes, 70, 64);
    put<std::int16_t>(bytes, 72, 64);
    CHECK_THROWS_AS(decode_nifti(bytes), FormatError);
  }
  SUBCASE("4-D volume") {
    put<std::int16_t>(bytes, 40, 4);
    put<std::int16_t>(bytes, 48, 2);
    CHECK_THROWS_AS(decode_nifti(bytes), FormatError);
  }
  SUBCASE("NaN voxel") {
    const float nan = NAN;
    std::memcpy(bytes.data() + 352, &nan, 4);
    CHECK_THROWS_AS(decode_nifti(bytes), ValidationError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_nifti(dir / "none.nii"), IoError);
  }
}

TEST_CASE("nifti int16 and uint16 with scaling") {
  auto b = reference_uint8_nifti({2, 1, 1}, Vec3::Ones(), {});
  put<std::int16_t>(b, 70, 4);  // DT_SIGNED_SHORT
  put<std::int16_t>(b, 72, 16);
  put<float>(b, 112, 0.5f);
  put<float>(b, 116, 10.0f);
  const std::int16_t vals[2] = {-4, 300};
  b.insert(b.end(), reinterpret_cast<const std::uint8_t*>(vals), reinterpret_cast<const std::uint8_t*>(vals) + 4);
  const AnyVolume any = decode_nifti(b);
  REQUIRE(std::holds_alternative<ImageVolume>(any));
  CHECK(std::get<ImageVolume>(any)[0] == 8.0f);
  CHECK(std::get<ImageVolume>(any)[1] == 160.0f);
  put<std::int16_t>(b, 70, 512);  // DT_UINT16
  CHECK(std::get<ImageVolume>(decode_nifti(b))[0] == doctest::Approx((65532 * 0.5) + 10));
}

TEST_CASE("nifti writes are byte-identical") {
  TempDir dir("nifti");
  std::mt19937_64 rng(3);
  const GridMeta m = random_grid(rng, 8);
  const ImageVolume v = ImageVolume::filled(m, 2.5f);
  write_nifti(v, dir / "a.nii");
  write_nifti(v, dir / "b.nii");
  CHECK(read_file_bytes(dir / "a.nii") == read_file_bytes(dir / "b.nii"));
  CHECK(encode_nifti(v) == read_file_bytes(dir / "a.nii"));
}

TEST_CASE("dicom series fixture") {
  TempDir dir("dicom");
  const int rows = 4, cols = 5, n = 4;
  const Vec3 row_dir = Vec3(1, 0, 0), col_dir = Vec3(0, 0, -1);  // coronal
  const Vec3 normal = row_dir.cross(col_dir);
  std::vector<std::string> names;
  for (int s = 0; s < n; ++s) {
    DicomSliceSpec spec;
    spec.rows = rows;
    spec.cols = cols;
    spec.row_dir = row_dir;
    spec.col_dir = col_dir;
    spec.row_spacing = 0.8;
    spec.col_spacing = 0.6;
    spec.thickness = 2.0;
    spec.position = Vec3(-20, 5, 40) + normal * (2.5 * s);
    spec.slope = 2.0;
    spec.intercept = -1.0;
    for (int p = 0; p < rows * cols; ++p) spec.pixels.push_back(static_cast<std::uint16_t>(100 * s + p));
    // file names deliberately not in slice order
    names.push_back(fmt::format("IM{:02d}.dcm", (s * 3) % n + 10 * (s % 2)));
    write_dicom_slice(dir / names.back(), spec);
  }
  const ImageVolume v = read_dicom_series(dir.path());
  CHECK(v.meta().dims == Index3{cols, rows, n});
  CHECK(v.meta().spacing.x() == doctest::Approx(0.6));
  CHECK(v.meta().spacing.y() == doctest::Approx(0.8));
  CHECK(v.meta().spacing.z() == doctest::Approx(2.5));
  CHECK((v.meta().origin - Vec3(-20, 5, 40)).norm() < 1e-9);
  CHECK((v.meta().direction.col(1) - col_dir).norm() < 1e-9);
  for (int s = 0; s < n; ++s) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) CHECK(v.at(c, r, s) == 2.0f * (100 * s + r * cols + c) - 1.0f);
    }
  }

  SUBCASE("listing order does not matter") {
    TempDir other("dicom");
    std::vector<std::string> shuffled = names;
    std::reverse(shuffled.begin(), shuffled.end());
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
      fs::copy_file(dir / shuffled[i], other / fmt::format("z{}.dcm", i));
    }
    CHECK(read_dicom_series(other.path()) == v);
  }
  SUBCASE("mixed series") {
    DicomSliceSpec spec;
    spec.series_uid = "1.2.3.999";
    spec.rows = rows;
    spec.cols = cols;
    spec.pixels.assign(rows * cols, 1);
    write_dicom_slice(dir / "other.dcm", spec);
    CHECK_THROWS_WITH_AS(read_dicom_series(dir.path()), doctest::Contains("mixed series"), ValidationError);
  }
  SUBCASE("compressed transfer syntax") {
    TempDir other("dicom");
    DicomSliceSpec spec;
    spec.transfer_syntax = "1.2.840.10008.1.2.4.90";
    spec.pixels.assign(spec.rows * spec.cols, 1);
    write_dicom_slice(other / "a.dcm", spec);
    CHECK_THROWS_WITH_AS(read_dicom_series(other.path()), doctest::Contains("unsupported transfer syntax"),
                         ValidationError);
  }
  SUBCASE("uneven slice gaps") {
    TempDir other("dicom");
    for (int s = 0; s < 3; ++s) {
      DicomSliceSpec spec;
      spec.pixels.assign(spec.rows * spec.cols, 1);
      spec.position = Vec3(0, 0, s == 2 ? 5.0 : s);
      write_dicom_slice(other / fmt::format("{}.dcm", s), spec);
    }
    CHECK_THROWS_WITH_AS(read_dicom_series(other.path()), doctest::Contains("geometry error"), ValidationError);
  }
  SUBCASE("not a dicom file") {
    std::ofstream(dir / "junk.dcm") << "hello";
    CHECK_THROWS_AS(read_dicom_series(dir.path()), FormatError);
  }
}

TEST_CASE("manifest json") {
  TempDir dir("manifest");
  CaseManifest m;
  m.case_id = "c01";
  m.sequences = {{"t1w", "t1w.nii"}, {"dce", "dce.nii"}};
  m.masks = {{"anatomy", "masks/anatomy.nii"}};
  m.notes = "x";
  const std::string text = manifest_to_json(m);
  for (const char* key : {"\"case_id\"", "\"sequences\"", "\"masks\"", "\"notes\"", "\"t1w\"", "\"dce\""}) {
    CHECK(text.find(key) != std::string::npos);
  }
  CHECK(manifest_from_json(text) == m);

  fs::create_directories(dir / "c01");
  save_manifest(m, dir / "c01" / kManifestFileName);
  CHECK_THROWS_WITH_AS(load_manifest(dir / "c01" / kManifestFileName), doctest::Contains("does not exist"),
                       ValidationError);
  for (const char* f : {"t1w.nii", "dce.nii"}) std::ofstream(dir / "c01" / f) << "x";
  fs::create_directories(dir / "c01/masks");
  std::ofstream(dir / "c01/masks/anatomy.nii") << "x";
  CHECK(load_manifest(dir / "c01" / kManifestFileName) == m);

  fs::create_directories(dir / "copy");
  fs::copy(dir / "c01", dir / "copy", fs::copy_options::recursive);
  CHECK_THROWS_WITH_AS(load_dataset(dir.path()), doctest::Contains("duplicate case_id"), ValidationError);

  CHECK_THROWS_AS(manifest_from_json("{\"case_id\": \"\", \"sequences\": {}}"), ValidationError);
  CHECK_THROWS_AS(manifest_from_json("{\"case_id\": \"a\", \"sequences\": {}, \"patient\": 1}"), ValidationError);
  CHECK_THROWS_AS(manifest_from_json("{not json"), FormatError);
}

TEST_CASE("transform json round trip") {
  RigidTransform x;
  x.angles = Vec3(0.1, -0.2, 0.3);
  x.translation = Vec3(1.25, -3, 7.5);
  x.center = Vec3(3, 4, 5);
  const RigidTransform y = transform_from_json(transform_to_json(x));
  CHECK(y.angles == x.angles);
  CHECK(y.translation == x.translation);
  CHECK(y.center == x.center);
  CHECK_THROWS_AS(transform_from_json("{\"angles_rad\": [1, 2]}"), ValidationError);
}
