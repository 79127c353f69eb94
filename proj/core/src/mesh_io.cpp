#include "mammoforge/mesh_io.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/Geometry>
#include <fmt/format.h>

#include "mammoforge/error.hpp"
#include "mammoforge/manifest.hpp"
#include "mammoforge/nifti.hpp"

namespace mammoforge {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

float get_f32(const std::uint8_t* p) {
  const std::uint32_t bits = get_u32(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

Label label_from_name(const std::string& name) {
  for (int l = 0; l <= labels::max_label; ++l) {
    if (labels::name(static_cast<Label>(l)) == name) return static_cast<Label>(l);
  }
  throw FormatError(fmt::format("unknown label group '{}'", name), 0);
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out.flush()) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace

Palette default_palette() {
  return {
      {labels::whole_breast, {{0.824, 0.706, 0.549}, 0.35}},
      {labels::fibroglandular, {{0.180, 0.700, 0.300}, 1.0}},
      {labels::lesion, {{0.860, 0.100, 0.100}, 1.0}},
  };
}

std::vector<std::uint8_t> encode_stl(const TriangleMesh& mesh) {
  std::vector<std::uint8_t> out;
  out.reserve(84 + 50 * mesh.triangles.size());
  std::string header = fmt::format("mammoforge binary STL label={}", labels::name(mesh.label));
  header.resize(80, '\0');
  out.insert(out.end(), header.begin(), header.end());
  put_u32(out, static_cast<std::uint32_t>(mesh.triangles.size()));
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    Vec3 n = (b - a).cross(c - a);
    if (n.norm() > 0) n.normalize();
    for (int i = 0; i < 3; ++i) put_f32(out, n[i]);
    for (const Vec3* v : {&a, &b, &c}) {
      for (int i = 0; i < 3; ++i) put_f32(out, (*v)[i]);
    }
    out.push_back(0);
    out.push_back(0);
  }
  return out;
}

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path) { write_bytes(path, encode_stl(mesh)); }

TriangleMesh read_stl(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 84) throw FormatError("truncated STL header", bytes.size());
  const std::uint32_t n = get_u32(bytes.data() + 80);
  if (bytes.size() != 84 + 50ull * n) {
    throw FormatError(fmt::format("STL size {} does not match {} triangles", bytes.size(), n), 80);
  }
  TriangleMesh mesh;
  const std::string header(reinterpret_cast<const char*>(bytes.data()), 80);
  const auto pos = header.find("label=");
  if (pos != std::string::npos) {
    const std::string name = header.substr(pos + 6, header.find('\0', pos) - pos - 6);
    mesh.label = label_from_name(name);
  }
  // Corners with bit-identical coordinates are welded back into one vertex.
  std::map<std::array<std::uint32_t, 3>, std::uint32_t> index;
  for (std::uint32_t t = 0; t < n; ++t) {
    const std::uint8_t* rec = bytes.data() + 84 + 50ull * t;
    std::array<std::uint32_t, 3> tri{};
    for (int v = 0; v < 3; ++v) {
      const std::uint8_t* p = rec + 12 + 12 * v;
      const std::array<std::uint32_t, 3> key{get_u32(p), get_u32(p + 4), get_u32(p + 8)};
      const auto [it, inserted] = index.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
      if (inserted) mesh.vertices.emplace_back(get_f32(p), get_f32(p + 4), get_f32(p + 8));
      tri[v] = it->second;
    }
    mesh.triangles.push_back(tri);
  }
  return mesh;
}

void write_obj_scene(const std::vector<TriangleMesh>& meshes, const std::filesystem::path& obj_path,
                     const Palette& palette) {
  auto mtl_path = obj_path;
  mtl_path.replace_extension(".mtl");
  std::string obj = fmt::format("# mammoforge scene\nmtllib {}\n", mtl_path.filename().string());
  std::string mtl = "# mammoforge materials\n";
  std::size_t offset = 1;
  for (const auto& mesh : meshes) {
    const std::string name(labels::name(mesh.label));
    const auto it = palette.find(mesh.label);
    const Material m = it != palette.end() ? it->second : Material{mesh.color, 1.0};
    mtl += fmt::format("\nnewmtl {}\nKa 0.000000 0.000000 0.000000\nKd {:.6f} {:.6f} {:.6f}\n"
                       "Ks 0.000000 0.000000 0.000000\nd {:.6f}\nillum 1\n",
                       name, m.diffuse[0], m.diffuse[1], m.diffuse[2], m.alpha);
    obj += fmt::format("g {}\nusemtl {}\n", name, name);
    for (const auto& v : mesh.vertices) obj += fmt::format("v {:.6f} {:.6f} {:.6f}\n", v.x(), v.y(), v.z());
    for (const auto& t : mesh.triangles) {
      obj += fmt::format("f {} {} {}\n", t[0] + offset, t[1] + offset, t[2] + offset);
    }
    offset += mesh.vertices.size();
  }
  write_text_atomic(mtl_path, mtl);
  write_text_atomic(obj_path, obj);
}

std::vector<TriangleMesh> read_obj(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Vec3> all;
  std::vector<TriangleMesh> meshes;
  std::vector<std::size_t> first_vertex;  // global index of each group's first vertex
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "g") {
      std::string name;
      ls >> name;
      meshes.emplace_back();
      meshes.back().label = label_from_name(name);
      first_vertex.push_back(all.size());
    } else if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw FormatError(fmt::format("bad vertex on line {}", line_no), line_no);
      all.push_back(v);
      if (!meshes.empty()) meshes.back().vertices.push_back(v);
    } else if (tag == "f") {
      if (meshes.empty()) throw FormatError(fmt::format("face outside a group on line {}", line_no), line_no);
      std::array<std::uint32_t, 3> t{};
      for (auto& idx : t) {
        std::string tok;
        if (!(ls >> tok)) throw FormatError(fmt::format("bad face on line {}", line_no), line_no);
        const long long g = std::stoll(tok.substr(0, tok.find('/')));
        const long long local = g - 1 - static_cast<long long>(first_vertex.back());
        if (local < 0 || local >= static_cast<long long>(meshes.back().vertices.size())) {
          throw FormatError(fmt::format("face index out of range on line {}", line_no), line_no);
        }
        idx = static_cast<std::uint32_t>(local);
      }
      meshes.back().triangles.push_back(t);
    }
  }
  return meshes;
}

void export_scene(const std::vector<TriangleMesh>& meshes, const std::filesystem::path& out_dir, SceneFormat format,
                  const Palette& palette) {
  if (meshes.empty()) throw ValidationError("export_scene needs at least one mesh");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError(fmt::format("cannot create output directory '{}'", out_dir.string()));
  }
  if (format == SceneFormat::stl_per_label) {
    for (const auto& m : meshes) write_stl(m, out_dir / fmt::format("{}.stl", labels::name(m.label)));
  } else {
    write_obj_scene(meshes, out_dir / kSceneObjName, palette);
  }
}

}  // namespace mammoforge
