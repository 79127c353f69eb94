#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "mammoforge/volume.hpp"

namespace mammoforge {

/// Lower-case hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Content hash of a mask ("sha256:<hex>") covering dims and labels.
/// Geometry other than dims is deliberately excluded.
std::string mask_hash(const LabelVolume& mask);

}  // namespace mammoforge
