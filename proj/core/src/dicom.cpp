#include "mammoforge/dicom.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mammoforge/error.hpp"
#include "mammoforge/nifti.hpp"

namespace mammoforge {
namespace {

constexpr std::string_view kExplicitLittleEndian = "1.2.840.10008.1.2.1";

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (static_cast<std::uint32_t>(group) << 16) | element;
}

constexpr std::uint32_t kTransferSyntax = tag(0x0002, 0x0010);
constexpr std::uint32_t kSliceThickness = tag(0x0018, 0x0050);
constexpr std::uint32_t kSeriesUid = tag(0x0020, 0x000E);
constexpr std::uint32_t kImagePosition = tag(0x0020, 0x0032);
constexpr std::uint32_t kImageOrientation = tag(0x0020, 0x0037);
constexpr std::uint32_t kSamplesPerPixel = tag(0x0028, 0x0002);
constexpr std::uint32_t kNumberOfFrames = tag(0x0028, 0x0008);
constexpr std::uint32_t kRows = tag(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag(0x0028, 0x0011);
constexpr std::uint32_t kPixelSpacing = tag(0x0028, 0x0030);
constexpr std::uint32_t kBitsAllocated = tag(0x0028, 0x0100);
constexpr std::uint32_t kPixelRepresentation = tag(0x0028, 0x0103);
constexpr std::uint32_t kRescaleIntercept = tag(0x0028, 0x1052);
constexpr std::uint32_t kRescaleSlope = tag(0x0028, 0x1053);
constexpr std::uint32_t kPixelData = tag(0x7FE0, 0x0010);
constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelimiter = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSequenceDelimiter = tag(0xFFFE, 0xE0DD);
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

struct Slice {
  std::string series_uid;
  Vec3 position = Vec3::Zero();
  Vec3 row_dir = Vec3::Zero();
  Vec3 col_dir = Vec3::Zero();
  double row_spacing = 0.0;  // distance between rows
  double col_spacing = 0.0;  // distance between columns
  double thickness = 0.0;
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;
  std::string file;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string file) : buf_(bytes), file_(std::move(file)) {}

  Slice read() {
    if (buf_.size() < 132 || std::memcmp(buf_.data() + 128, "DICM", 4) != 0) {
      throw FormatError(fmt::format("'{}' is not a DICOM Part-10 file (missing DICM prefix)", file_), 128);
    }
    pos_ = 132;
    // File meta group is always explicit VR little endian.
    while (pos_ + 4 <= buf_.size() && u16(pos_) == 0x0002) element(true);
    if (transfer_syntax_ != kExplicitLittleEndian) {
      throw ValidationError(fmt::format("unsupported transfer syntax '{}' in '{}'", transfer_syntax_, file_));
    }
    while (pos_ < buf_.size() && !have_pixels_) element(true);
    return finish();
  }

 private:
  std::uint16_t u16(std::size_t at) const {
    need(at, 2);
    std::uint16_t v;
    std::memcpy(&v, buf_.data() + at, 2);
    return v;
  }
  std::uint32_t u32(std::size_t at) const {
    need(at, 4);
    std::uint32_t v;
    std::memcpy(&v, buf_.data() + at, 4);
    return v;
  }
  void need(std::size_t at, std::size_t n) const {
    if (at + n > buf_.size()) throw FormatError(fmt::format("truncated DICOM element in '{}'", file_), at);
  }

  static bool long_form(std::string_view vr) {
    static constexpr std::string_view kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                                 "SV", "UC", "UN", "UR", "UT", "UV"};
    return std::find(std::begin(kLong), std::end(kLong), vr) != std::end(kLong);
  }

  // Parses one element at pos_; decodes the few tags we need and skips the rest.
  void element(bool top_level) {
    const std::size_t start = pos_;
    const std::uint32_t t = tag(u16(pos_), u16(pos_ + 2));
    need(pos_ + 4, 2);
    const std::string_view vr(reinterpret_cast<const char*>(buf_.data() + pos_ + 4), 2);
    std::uint32_t length;
    if (long_form(vr)) {
      length = u32(pos_ + 8);
      pos_ += 12;
    } else {
      if (!std::isupper(static_cast<unsigned char>(vr[0])) || !std::isupper(static_cast<unsigned char>(vr[1]))) {
        throw FormatError(fmt::format("invalid VR in '{}'", file_), start + 4);
      }
      length = u16(pos_ + 6);
      pos_ += 8;
    }
    if (length == kUndefinedLength) {
      if (vr != "SQ") {
        throw ValidationError(fmt::format("unsupported transfer syntax: encapsulated data in '{}'", file_));
      }
      skip_undefined_sequence();
      return;
    }
    need(pos_, length);
    const std::span<const std::uint8_t> value = buf_.subspan(pos_, length);
    pos_ += length;
    if (!top_level) return;
    decode(t, value);
  }

  void skip_undefined_sequence() {
    for (;;) {
      const std::uint32_t t = tag(u16(pos_), u16(pos_ + 2));
      const std::uint32_t length = u32(pos_ + 4);
      pos_ += 8;
      if (t == kSequenceDelimiter) return;
      if (t != kItem) throw FormatError(fmt::format("malformed sequence in '{}'", file_), pos_ - 8);
      if (length != kUndefinedLength) {
        need(pos_, length);
        pos_ += length;
        continue;
      }
      for (;;) {
        if (tag(u16(pos_), u16(pos_ + 2)) == kItemDelimiter) {
          pos_ += 8;
          break;
        }
        element(false);
      }
    }
  }

  static std::string text(std::span<const std::uint8_t> v) {
    std::string s(reinterpret_cast<const char*>(v.data()), v.size());
    while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
    const auto first = s.find_first_not_of(' ');
    return first == std::string::npos ? std::string() : s.substr(first);
  }

  std::vector<double> numbers(std::span<const std::uint8_t> v, std::uint32_t t) const {
    std::vector<double> out;
    const std::string s = text(v);
    std::size_t begin = 0;
    while (begin <= s.size()) {
      const auto end = s.find('\\', begin);
      const std::string part = s.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
      try {
        out.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw FormatError(fmt::format("bad numeric value in tag {:08X} of '{}'", t, file_), pos_);
      }
      if (end == std::string::npos) break;
      begin = end + 1;
    }
    return out;
  }

  std::uint16_t us(std::span<const std::uint8_t> v, std::uint32_t t) const {
    if (v.size() < 2) throw FormatError(fmt::format("short US value in tag {:08X}", t), pos_);
    std::uint16_t x;
    std::memcpy(&x, v.data(), 2);
    return x;
  }

  void decode(std::uint32_t t, std::span<const std::uint8_t> v) {
    switch (t) {
      case kTransferSyntax: transfer_syntax_ = text(v); break;
      case kSeriesUid: slice_.series_uid = text(v); break;
      case kImagePosition: position_ = numbers(v, t); break;
      case kImageOrientation: orientation_ = numbers(v, t); break;
      case kPixelSpacing: spacing_ = numbers(v, t); break;
      case kSliceThickness: slice_.thickness = numbers(v, t).at(0); break;
      case kRows: slice_.rows = us(v, t); break;
      case kColumns: slice_.cols = us(v, t); break;
      case kSamplesPerPixel: samples_ = us(v, t); break;
      case kNumberOfFrames: frames_ = static_cast<int>(numbers(v, t).at(0)); break;
      case kBitsAllocated: bits_ = us(v, t); break;
      case kPixelRepresentation: signed_ = us(v, t) == 1; break;
      case kRescaleSlope: slope_ = numbers(v, t).at(0); break;
      case kRescaleIntercept: intercept_ = numbers(v, t).at(0); break;
      case kPixelData:
        pixel_bytes_ = v;
        have_pixels_ = true;
        break;
      default: break;
    }
  }

  Slice finish() {
    const auto missing = [&](std::string_view what) {
      return FormatError(fmt::format("missing {} in '{}'", what, file_), pos_);
    };
    if (slice_.series_uid.empty()) throw missing("SeriesInstanceUID");
    if (position_.size() != 3) throw missing("ImagePositionPatient");
    if (orientation_.size() != 6) throw missing("ImageOrientationPatient");
    if (spacing_.size() != 2) throw missing("PixelSpacing");
    if (slice_.rows <= 0 || slice_.cols <= 0) throw missing("Rows/Columns");
    if (!have_pixels_) throw missing("PixelData");
    if (samples_ != 1) throw ValidationError(fmt::format("'{}' is not a single-channel image", file_));
    if (frames_ != 1) throw ValidationError(fmt::format("'{}' is a multi-frame image", file_));
    if (bits_ != 8 && bits_ != 16) {
      throw ValidationError(fmt::format("unsupported BitsAllocated {} in '{}'", bits_, file_));
    }
    slice_.position = Vec3(position_[0], position_[1], position_[2]);
    slice_.row_dir = Vec3(orientation_[0], orientation_[1], orientation_[2]);
    slice_.col_dir = Vec3(orientation_[3], orientation_[4], orientation_[5]);
    slice_.row_spacing = spacing_[0];
    slice_.col_spacing = spacing_[1];

    const std::size_t n = static_cast<std::size_t>(slice_.rows) * slice_.cols;
    const std::size_t bytes = n * (bits_ / 8);
    if (pixel_bytes_.size() < bytes) {
      throw FormatError(fmt::format("pixel data too short in '{}'", file_), buf_.size());
    }
    slice_.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double raw;
      if (bits_ == 8) {
        raw = signed_ ? static_cast<std::int8_t>(pixel_bytes_[i]) : pixel_bytes_[i];
      } else if (signed_) {
        std::int16_t x;
        std::memcpy(&x, pixel_bytes_.data() + 2 * i, 2);
        raw = x;
      } else {
        std::uint16_t x;
        std::memcpy(&x, pixel_bytes_.data() + 2 * i, 2);
        raw = x;
      }
      slice_.pixels[i] = static_cast<float>(raw * slope_ + intercept_);
    }
    slice_.file = file_;
    return std::move(slice_);
  }

  std::span<const std::uint8_t> buf_;
  std::string file_;
  std::size_t pos_ = 0;
  std::string transfer_syntax_;
  Slice slice_;
  std::vector<double> position_, orientation_, spacing_;
  int samples_ = 1, frames_ = 1, bits_ = 16;
  bool signed_ = false;
  double slope_ = 1.0, intercept_ = 0.0;
  std::span<const std::uint8_t> pixel_bytes_;
  bool have_pixels_ = false;
};

}  // namespace

ImageVolume read_dicom_series(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError(fmt::format("'{}' is not a directory", dir.string()));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename().string().starts_with(".")) continue;
    files.push_back(entry.path());
  }
  if (files.empty()) throw ValidationError(fmt::format("no DICOM files in '{}'", dir.string()));
  std::sort(files.begin(), files.end());

  std::vector<Slice> slices;
  for (const auto& f : files) {
    const auto bytes = read_file_bytes(f);
    slices.push_back(Reader(bytes, f.filename().string()).read());
  }

  const Slice& ref = slices.front();
  for (const auto& s : slices) {
    if (s.series_uid != ref.series_uid) {
      throw ValidationError(fmt::format("mixed series: '{}' and '{}' in one directory", ref.series_uid,
                                        s.series_uid));
    }
    if (s.rows != ref.rows || s.cols != ref.cols) {
      throw ValidationError("geometry error: slices have different matrix sizes");
    }
    if ((s.row_dir - ref.row_dir).cwiseAbs().maxCoeff() > 1e-4 ||
        (s.col_dir - ref.col_dir).cwiseAbs().maxCoeff() > 1e-4) {
      throw ValidationError("geometry error: slices have different orientations");
    }
    if (std::abs(s.row_spacing - ref.row_spacing) > 1e-4 || std::abs(s.col_spacing - ref.col_spacing) > 1e-4) {
      throw ValidationError("geometry error: slices have different pixel spacing");
    }
  }
  const Vec3 row_dir = ref.row_dir.normalized();
  const Vec3 col_dir = ref.col_dir.normalized();
  if (std::abs(row_dir.dot(col_dir)) > 1e-4) {
    throw ValidationError("geometry error: ImageOrientationPatient axes are not orthogonal");
  }
  const Vec3 normal = row_dir.cross(col_dir).normalized();

  std::vector<double> proj(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) proj[i] = slices[i].position.dot(normal);
  std::vector<std::size_t> order(slices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });

  double slice_spacing = ref.thickness > 0 ? ref.thickness : 1.0;
  if (slices.size() > 1) {
    std::vector<double> gaps;
    for (std::size_t i = 1; i < order.size(); ++i) gaps.push_back(proj[order[i]] - proj[order[i - 1]]);
    const double total = proj[order.back()] - proj[order.front()];
    slice_spacing = total / static_cast<double>(gaps.size());
    if (!(slice_spacing > 0.0)) throw ValidationError("geometry error: slices share one position");
    for (const double g : gaps) {
      if (std::abs(g - slice_spacing) > 0.01 * slice_spacing) {
        throw ValidationError(fmt::format(
            "geometry error: non-uniform slice spacing ({:.4f} mm vs mean {:.4f} mm)", g, slice_spacing));
      }
    }
  }

  GridMeta meta;
  meta.dims = {ref.cols, ref.rows, static_cast<int>(slices.size())};
  meta.spacing = Vec3(ref.col_spacing, ref.row_spacing, slice_spacing);
  meta.direction.col(0) = row_dir;
  meta.direction.col(1) = col_dir;
  meta.direction.col(2) = normal;
  meta.origin = slices[order.front()].position;

  std::vector<float> voxels;
  voxels.reserve(meta.voxel_count());
  for (const std::size_t i : order) {
    voxels.insert(voxels.end(), slices[i].pixels.begin(), slices[i].pixels.end());
  }
  return ImageVolume(meta, std::move(voxels));
}

}  // namespace mammoforge
