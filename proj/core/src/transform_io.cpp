#include "mammoforge/transform_io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include "mammoforge/error.hpp"
#include "mammoforge/manifest.hpp"

namespace mammoforge {
namespace {

nlohmann::ordered_json vec(const Vec3& v) { return nlohmann::ordered_json::array({v.x(), v.y(), v.z()}); }

Vec3 vec(const nlohmann::ordered_json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw ValidationError(fmt::format("transform field '{}' must have 3 numbers", key));
  return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

}  // namespace

std::string transform_to_json(const RigidTransform& xform) {
  nlohmann::ordered_json j;
  j["angles_rad"] = vec(xform.angles);
  j["translation_mm"] = vec(xform.translation);
  j["center_mm"] = vec(xform.center);
  return j.dump(2) + "\n";
}

RigidTransform transform_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    RigidTransform t;
    t.angles = vec(j, "angles_rad");
    t.translation = vec(j, "translation_mm");
    t.center = vec(j, "center_mm");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed transform JSON: {}", e.what()));
  }
}

void save_transform(const RigidTransform& xform, const std::filesystem::path& path) {
  write_text_atomic(path, transform_to_json(xform));
}

RigidTransform load_transform(const std::filesystem::path& path) {
  return transform_from_json(read_text(path));
}

}  // namespace mammoforge
