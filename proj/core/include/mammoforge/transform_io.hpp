#pragma once

#include <filesystem>
#include <string>

#include "mammoforge/transform.hpp"

namespace mammoforge {

/// {"angles_rad": [3], "translation_mm": [3], "center_mm": [3]}
std::string transform_to_json(const RigidTransform& xform);
RigidTransform transform_from_json(const std::string& text);

void save_transform(const RigidTransform& xform, const std::filesystem::path& path);
RigidTransform load_transform(const std::filesystem::path& path);

}  // namespace mammoforge
