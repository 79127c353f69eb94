#include "mammoforge/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <fmt/format.h>
#include <zlib.h>

#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

static_assert(std::endian::native == std::endian::little,
              "NIfTI codec assumes a little-endian host");

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtUint16 = 512;

// Field offsets of the NIfTI-1 header.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t intent_code = 68;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t descrip = 148;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t quatern_b = 256;
constexpr std::size_t qoffset_x = 268;
constexpr std::size_t srow_x = 280;
constexpr std::size_t intent_name = 328;
constexpr std::size_t magic = 344;
}  // namespace off

// LPS <-> RAS flip.
const Mat3 kFlip = Vec3(-1.0, -1.0, 1.0).asDiagonal();

template <typename T>
void put(std::vector<std::uint8_t>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> buf, std::size_t offset) {
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  return value;
}

std::vector<std::uint8_t> encode_header(const GridMeta& meta, std::int16_t datatype,
                                        std::int16_t bitpix, bool is_label) {
  std::vector<std::uint8_t> buf(kDataOffset, 0);
  put<std::int32_t>(buf, off::sizeof_hdr, static_cast<std::int32_t>(kHeaderSize));
  put<std::int16_t>(buf, off::dim, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(buf, off::dim + 2 * (a + 1), static_cast<std::int16_t>(meta.dims[a]));
  for (int a = 4; a < 8; ++a) put<std::int16_t>(buf, off::dim + 2 * a, 1);
  put<std::int16_t>(buf, off::intent_code, is_label ? kNiftiIntentLabel : 0);
  put<std::int16_t>(buf, off::datatype, datatype);
  put<std::int16_t>(buf, off::bitpix, bitpix);

  Mat3 ras = kFlip * meta.direction;
  float qfac = 1.0f;
  if (ras.determinant() < 0) {
    qfac = -1.0f;
    ras.col(2) *= -1.0;
  }
  put<float>(buf, off::pixdim, qfac);
  for (int a = 0; a < 3; ++a) put<float>(buf, off::pixdim + 4 * (a + 1), static_cast<float>(meta.spacing[a]));
  put<float>(buf, off::vox_offset, static_cast<float>(kDataOffset));
  put<float>(buf, off::scl_slope, is_label ? 0.0f : 1.0f);
  put<float>(buf, off::scl_inter, 0.0f);
  buf[off::xyzt_units] = 2;  // millimetres
  const std::string_view descrip = "mammoforge";
  std::memcpy(buf.data() + off::descrip, descrip.data(), descrip.size());
  if (is_label) {
    const std::string_view name = "labels";
    std::memcpy(buf.data() + off::intent_name, name.data(), name.size());
  }

  Eigen::Quaterniond q(ras);
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  const Vec3 origin_ras = kFlip * meta.origin;
  put<std::int16_t>(buf, off::qform_code, 1);
  put<std::int16_t>(buf, off::sform_code, 1);
  put<float>(buf, off::quatern_b, static_cast<float>(q.x()));
  put<float>(buf, off::quatern_b + 4, static_cast<float>(q.y()));
  put<float>(buf, off::quatern_b + 8, static_cast<float>(q.z()));
  for (int a = 0; a < 3; ++a) put<float>(buf, off::qoffset_x + 4 * a, static_cast<float>(origin_ras[a]));

  const Mat3 affine = kFlip * meta.direction * meta.spacing.asDiagonal();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) put<float>(buf, off::srow_x + 16 * r + 4 * c, static_cast<float>(affine(r, c)));
    put<float>(buf, off::srow_x + 16 * r + 12, static_cast<float>(origin_ras[r]));
  }
  std::memcpy(buf.data() + off::magic, "n+1\0", 4);
  return buf;
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

GridMeta decode_geometry(std::span<const std::uint8_t> buf, const Index3& dims) {
  GridMeta meta;
  meta.dims = dims;
  Vec3 pixdim;
  for (int a = 0; a < 3; ++a) pixdim[a] = std::abs(get<float>(buf, off::pixdim + 4 * (a + 1)));

  const auto sform_code = get<std::int16_t>(buf, off::sform_code);
  const auto qform_code = get<std::int16_t>(buf, off::qform_code);
  if (sform_code > 0) {
    Mat3 affine;
    Vec3 origin;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) affine(r, c) = get<float>(buf, off::srow_x + 16 * r + 4 * c);
      origin[r] = get<float>(buf, off::srow_x + 16 * r + 12);
    }
    affine = kFlip * affine;
    for (int c = 0; c < 3; ++c) {
      meta.spacing[c] = affine.col(c).norm();
      if (!(meta.spacing[c] > 0.0)) throw FormatError("sform has a zero-length axis", off::srow_x);
      affine.col(c) /= meta.spacing[c];
    }
    meta.direction = nearest_rotation(affine);
    meta.origin = kFlip * origin;
  } else if (qform_code > 0) {
    const double b = get<float>(buf, off::quatern_b);
    const double c = get<float>(buf, off::quatern_b + 4);
    const double d = get<float>(buf, off::quatern_b + 8);
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    Mat3 r = Eigen::Quaterniond(a, b, c, d).normalized().toRotationMatrix();
    if (get<float>(buf, off::pixdim) < 0) r.col(2) *= -1.0;
    meta.direction = kFlip * r;
    for (int i = 0; i < 3; ++i) meta.origin[i] = get<float>(buf, off::qoffset_x + 4 * i);
    meta.origin = kFlip * meta.origin;
    meta.spacing = pixdim;
  } else {
    meta.spacing = pixdim;
  }
  for (int a = 0; a < 3; ++a) {
    if (!(meta.spacing[a] > 0.0)) meta.spacing[a] = 1.0;
  }
  return meta;
}

template <typename T>
std::vector<std::uint8_t> encode(const Volume<T>& volume, std::int16_t datatype, std::int16_t bitpix,
                                 bool is_label) {
  auto buf = encode_header(volume.meta(), datatype, bitpix, is_label);
  const auto data = volume.data();
  const std::size_t start = buf.size();
  buf.resize(start + data.size_bytes());
  std::memcpy(buf.data() + start, data.data(), data.size_bytes());
  return buf;
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  const bool gz = path.extension() == ".gz";
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (f == nullptr) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int closed = gzclose(f);
    if (written != static_cast<int>(bytes.size()) || closed != Z_OK) {
      throw IoError(fmt::format("failed writing '{}'", path.string()));
    }
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw IoError(fmt::format("file '{}' does not exist", path.string()));
  }
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::vector<std::uint8_t> bytes;
  std::vector<std::uint8_t> chunk(1 << 16);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      gzclose(f);
      throw FormatError(fmt::format("corrupt gzip stream in '{}'", path.string()), bytes.size());
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return bytes;
}

std::vector<std::uint8_t> encode_nifti(const ImageVolume& volume) {
  return encode(volume, kDtFloat32, 32, false);
}

std::vector<std::uint8_t> encode_nifti(const LabelVolume& volume) {
  return encode(volume, kDtUint8, 8, true);
}

AnyVolume decode_nifti(std::span<const std::uint8_t> buf) {
  if (buf.size() < kHeaderSize) {
    throw FormatError(fmt::format("truncated header ({} of {} bytes)", buf.size(), kHeaderSize), buf.size());
  }
  const auto sizeof_hdr = get<std::int32_t>(buf, off::sizeof_hdr);
  if (sizeof_hdr != static_cast<std::int32_t>(kHeaderSize)) {
    const auto u = static_cast<std::uint32_t>(sizeof_hdr);
    const std::uint32_t swapped =
        (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
    if (swapped == kHeaderSize) {
      throw FormatError("big-endian NIfTI files are not supported", off::sizeof_hdr);
    }
    throw FormatError(fmt::format("invalid sizeof_hdr {}", sizeof_hdr), off::sizeof_hdr);
  }
  if (std::memcmp(buf.data() + off::magic, "n+1\0", 4) != 0) {
    if (std::memcmp(buf.data() + off::magic, "ni1\0", 4) == 0) {
      throw FormatError("two-file NIfTI (.hdr/.img) is not supported", off::magic);
    }
    throw FormatError("invalid NIfTI-1 magic", off::magic);
  }
  const auto ndim = get<std::int16_t>(buf, off::dim);
  if (ndim < 1 || ndim > 7) throw FormatError(fmt::format("invalid dim[0] {}", ndim), off::dim);
  Index3 dims{1, 1, 1};
  for (int a = 0; a < ndim; ++a) {
    const auto d = get<std::int16_t>(buf, off::dim + 2 * (a + 1));
    if (d < 1) throw FormatError(fmt::format("invalid dim[{}] {}", a + 1, d), off::dim + 2 * (a + 1));
    if (a < 3) {
      dims[a] = d;
    } else if (d != 1) {
      throw FormatError("only 3-D volumes are supported", off::dim + 2 * (a + 1));
    }
  }
  const auto datatype = get<std::int16_t>(buf, off::datatype);
  int bytes_per_voxel = 0;
  switch (datatype) {
    case kDtUint8: bytes_per_voxel = 1; break;
    case kDtInt16:
    case kDtUint16: bytes_per_voxel = 2; break;
    case kDtFloat32: bytes_per_voxel = 4; break;
    default:
      throw FormatError(fmt::format("unsupported datatype {}", datatype), off::datatype);
  }
  if (get<std::int16_t>(buf, off::bitpix) != 8 * bytes_per_voxel) {
    throw FormatError("bitpix does not match datatype", off::bitpix);
  }
  const float vox_offset_f = get<float>(buf, off::vox_offset);
  if (!(vox_offset_f >= static_cast<float>(kDataOffset)) || vox_offset_f != std::floor(vox_offset_f)) {
    throw FormatError(fmt::format("invalid vox_offset {}", vox_offset_f), off::vox_offset);
  }
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
  GridMeta meta = decode_geometry(buf, dims);
  const std::size_t count = meta.voxel_count();
  const std::size_t needed = vox_offset + count * static_cast<std::size_t>(bytes_per_voxel);
  if (buf.size() < needed) {
    throw FormatError(fmt::format("truncated voxel data ({} of {} bytes)", buf.size(), needed), buf.size());
  }
  const std::uint8_t* data = buf.data() + vox_offset;

  const bool integer = datatype != kDtFloat32;
  if (integer && get<std::int16_t>(buf, off::intent_code) == kNiftiIntentLabel) {
    std::vector<Label> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      int value = 0;
      if (datatype == kDtUint8) {
        value = data[i];
      } else if (datatype == kDtInt16) {
        std::int16_t v;
        std::memcpy(&v, data + 2 * i, 2);
        value = v;
      } else {
        std::uint16_t v;
        std::memcpy(&v, data + 2 * i, 2);
        value = v;
      }
      if (!labels::is_registered(value)) {
        throw ValidationError(fmt::format("label {} at voxel {} is not in the label dictionary", value, i));
      }
      out[i] = static_cast<Label>(value);
    }
    return LabelVolume(std::move(meta), std::move(out));
  }

  float slope = get<float>(buf, off::scl_slope);
  float inter = get<float>(buf, off::scl_inter);
  if (slope == 0.0f || !std::isfinite(slope)) {
    slope = 1.0f;
    inter = 0.0f;
  }
  if (!std::isfinite(inter)) inter = 0.0f;
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    float raw = 0.0f;
    switch (datatype) {
      case kDtUint8: raw = data[i]; break;
      case kDtInt16: { std::int16_t v; std::memcpy(&v, data + 2 * i, 2); raw = v; break; }
      case kDtUint16: { std::uint16_t v; std::memcpy(&v, data + 2 * i, 2); raw = v; break; }
      default: std::memcpy(&raw, data + 4 * i, 4); break;
    }
    out[i] = (slope == 1.0f && inter == 0.0f) ? raw : raw * slope + inter;
  }
  return ImageVolume(std::move(meta), std::move(out));
}

AnyVolume read_nifti(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_nifti(bytes);
}

ImageVolume read_nifti_image(const std::filesystem::path& path) {
  auto any = read_nifti(path);
  if (auto* img = std::get_if<ImageVolume>(&any)) return std::move(*img);
  const auto& lab = std::get<LabelVolume>(any);
  std::vector<float> values(lab.data().begin(), lab.data().end());
  return ImageVolume(lab.meta(), std::move(values));
}

LabelVolume read_nifti_labels(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  auto any = decode_nifti(bytes);
  if (auto* lab = std::get_if<LabelVolume>(&any)) return std::move(*lab);
  // Integer files without the label intent, as written by external editors.
  const auto datatype = get<std::int16_t>(bytes, off::datatype);
  if (datatype == kDtFloat32) {
    throw ValidationError(fmt::format("'{}' holds float data, not labels", path.string()));
  }
  const auto& img = std::get<ImageVolume>(any);
  std::vector<Label> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = img[i];
    if (v != std::floor(v) || !labels::is_registered(static_cast<int>(v))) {
      throw ValidationError(fmt::format("value {} at voxel {} is not in the label dictionary", v, i));
    }
    out[i] = static_cast<Label>(v);
  }
  return LabelVolume(img.meta(), std::move(out));
}

void write_nifti(const ImageVolume& volume, const std::filesystem::path& path) {
  write_bytes(encode_nifti(volume), path);
}

void write_nifti(const LabelVolume& volume, const std::filesystem::path& path) {
  write_bytes(encode_nifti(volume), path);
}

}  // namespace mammoforge
