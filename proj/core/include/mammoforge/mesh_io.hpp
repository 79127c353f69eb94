#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mammoforge/mesh.hpp"

namespace mammoforge {

struct Material {
  Rgb diffuse{1.0, 1.0, 1.0};
  double alpha = 1.0;
};

using Palette = std::map<Label, Material>;

/// Whole breast semi-transparent tan, fibroglandular green, lesion red.
Palette default_palette();

enum class SceneFormat { stl_per_label, obj_mtl };

inline constexpr const char* kSceneObjName = "scene.obj";
inline constexpr const char* kSceneMtlName = "scene.mtl";

/// Binary little-endian STL: 80-byte header, uint32 count, 50 bytes per triangle.
std::vector<std::uint8_t> encode_stl(const TriangleMesh& mesh);
void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path);
/// Corners sharing identical coordinates become one vertex.
TriangleMesh read_stl(const std::filesystem::path& path);

/// One OBJ group and material per mesh, named after the mesh label.
void write_obj_scene(const std::vector<TriangleMesh>& meshes, const std::filesystem::path& obj_path,
                     const Palette& palette = default_palette());

/// One mesh per `g` group; labels are recovered from group names.
std::vector<TriangleMesh> read_obj(const std::filesystem::path& path);

/// stl_per_label writes `<label_name>.stl` per mesh; obj_mtl writes
/// scene.obj + scene.mtl. Throws ValidationError for an empty list and
/// IoError when the directory cannot be written.
void export_scene(const std::vector<TriangleMesh>& meshes, const std::filesystem::path& out_dir, SceneFormat format,
                  const Palette& palette = default_palette());

}  // namespace mammoforge
