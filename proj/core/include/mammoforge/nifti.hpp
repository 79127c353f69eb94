#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "mammoforge/volume.hpp"

namespace mammoforge {

/// Result of decoding a NIfTI file: labels when the file is integer typed and
/// carries the label intent, a scalar image otherwise.
using AnyVolume = std::variant<ImageVolume, LabelVolume>;

/// NIfTI intent code marking a label map.
inline constexpr std::int16_t kNiftiIntentLabel = 1002;

/// Single-file NIfTI-1 (.nii, optionally .nii.gz), little-endian.
/// Accepted datatypes: uint8, int16, uint16, float32. The on-disk frame is
/// RAS; volumes are converted to and from the internal LPS frame.
AnyVolume read_nifti(const std::filesystem::path& path);

/// Reads any supported file as a scalar image (label files are converted).
ImageVolume read_nifti_image(const std::filesystem::path& path);

/// Reads any integer-typed file as labels, regardless of intent code.
/// Values outside the label dictionary raise ValidationError.
LabelVolume read_nifti_labels(const std::filesystem::path& path);

/// Scalars are stored as float32, labels as uint8 with the label intent.
/// Output is byte-identical for identical volumes. ".gz" suffix enables gzip.
void write_nifti(const ImageVolume& volume, const std::filesystem::path& path);
void write_nifti(const LabelVolume& volume, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_nifti(const ImageVolume& volume);
std::vector<std::uint8_t> encode_nifti(const LabelVolume& volume);
AnyVolume decode_nifti(std::span<const std::uint8_t> bytes);

/// Whole-file read with transparent gzip decompression.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace mammoforge
