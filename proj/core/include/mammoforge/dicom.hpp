#pragma once

#include <filesystem>

#include "mammoforge/volume.hpp"

namespace mammoforge {

/// Reads a directory of single-frame MR slices into one volume.
///
/// Only uncompressed explicit-VR little-endian Part-10 files are accepted.
/// Slices are ordered by the projection of ImagePositionPatient onto the slice
/// normal, so the result does not depend on directory listing order. Only
/// geometry and pixel tags are decoded; everything else (including patient
/// identifiers) is skipped without being retained.
///
/// Errors: ValidationError for mixed series, unsupported transfer syntaxes and
/// inconsistent geometry (messages start with "mixed series",
/// "unsupported transfer syntax" and "geometry error"); FormatError for
/// malformed files.
ImageVolume read_dicom_series(const std::filesystem::path& dir);

}  // namespace mammoforge
