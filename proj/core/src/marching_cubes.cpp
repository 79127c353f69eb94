#include <algorithm>
#include <array>
#include <map>
#include <unordered_map>

#include <Eigen/Geometry>

#include "mammoforge/error.hpp"
#include "mammoforge/mesh.hpp"

namespace mammoforge {
namespace {

// Corner c sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1) in the unit cube.
Vec3 corner_pos(int c) { return Vec3(c & 1, (c >> 1) & 1, (c >> 2) & 1); }

struct Edge {
  int a, b;  // corners, a < b, differing in one bit
  int axis;
};

// Edges 4*axis + m, where m enumerates the two remaining bits.
constexpr std::array<Edge, 12> make_edges() {
  std::array<Edge, 12> edges{};
  int n = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (int m = 0; m < 4; ++m) {
      const int base = ((m & 1) << u) | (((m >> 1) & 1) << v);
      edges[n++] = {base, base | (1 << axis), axis};
    }
  }
  return edges;
}
constexpr auto kEdges = make_edges();

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    if ((kEdges[e].a == a && kEdges[e].b == b) || (kEdges[e].a == b && kEdges[e].b == a)) return e;
  }
  return -1;
}

Vec3 edge_mid(int e) { return 0.5 * (corner_pos(kEdges[e].a) + corner_pos(kEdges[e].b)); }

// Faces (axis, side) with their corners in cyclic order.
struct Face {
  int axis, side;
  std::array<int, 4> corners;
  Vec3 normal;
};

std::array<Face, 6> make_faces() {
  std::array<Face, 6> faces{};
  int n = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = axis == 0 ? 1 : 0, v = axis == 2 ? 1 : 2;
    for (int side = 0; side < 2; ++side) {
      const int s = side << axis;
      Face f{axis, side, {s, s | (1 << u), s | (1 << u) | (1 << v), s | (1 << v)}, Vec3::Zero()};
      f.normal[axis] = side ? 1.0 : -1.0;
      faces[n++] = f;
    }
  }
  return faces;
}

bool edges_share_face(int e1, int e2) {
  // Two cube edges lie on a common face when their four corners span a face.
  const int bits = (1 << kEdges[e1].a) | (1 << kEdges[e1].b) | (1 << kEdges[e2].a) | (1 << kEdges[e2].b);
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      int face_bits = 0;
      for (int c = 0; c < 8; ++c) {
        if (((c >> axis) & 1) == side) face_bits |= 1 << c;
      }
      if ((bits & ~face_bits) == 0) return true;
    }
  }
  return false;
}

// A vertex reference: 0..11 is an edge midpoint, 12 + k is the centroid of
// extra_centroids[k].
struct CaseTriangles {
  std::vector<std::array<int, 3>> triangles;
  std::vector<std::vector<int>> centroids;
};

std::vector<std::array<int, 3>> fan(const std::vector<int>& loop, std::size_t start) {
  std::vector<std::array<int, 3>> tris;
  const std::size_t n = loop.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    tris.push_back({loop[start], loop[(start + i) % n], loop[(start + i + 1) % n]});
  }
  return tris;
}

CaseTriangles build_case(int config) {
  const auto faces = make_faces();
  const auto inside = [&](int c) { return ((config >> c) & 1) != 0; };
  std::map<int, int> next;  // edge -> following edge along the oriented loop
  for (const auto& f : faces) {
    std::vector<std::pair<int, int>> segments;  // (edge, edge), unoriented, with the inside corner
    std::vector<int> cut_corner;
    int inside_count = 0;
    for (int c : f.corners) inside_count += inside(c);
    if (inside_count == 0 || inside_count == 4) continue;
    const auto& k = f.corners;
    const bool ambiguous = inside_count == 2 && inside(k[0]) == inside(k[2]);
    if (ambiguous) {
      // Inside corners are kept apart: cut each of them off.
      for (int i = 0; i < 4; ++i) {
        if (!inside(k[i])) continue;
        segments.push_back({edge_between(k[i], k[(i + 3) % 4]), edge_between(k[i], k[(i + 1) % 4])});
        cut_corner.push_back(k[i]);
      }
    } else {
      std::vector<int> crossed;
      int some_inside = -1;
      for (int i = 0; i < 4; ++i) {
        if (inside(k[i]) != inside(k[(i + 1) % 4])) crossed.push_back(edge_between(k[i], k[(i + 1) % 4]));
        if (inside(k[i]) && some_inside < 0) some_inside = k[i];
      }
      segments.push_back({crossed[0], crossed[1]});
      cut_corner.push_back(some_inside);
    }
    for (std::size_t s = 0; s < segments.size(); ++s) {
      auto [p, q] = segments[s];
      const Vec3 P = edge_mid(p), Q = edge_mid(q);
      // Orient so the surface normal points from inside to outside.
      if ((Q - P).cross(f.normal).dot(corner_pos(cut_corner[s]) - P) < 0) std::swap(p, q);
      if (next.count(p)) throw ProcessingError("marching cubes table: inconsistent loop");
      next[p] = q;
    }
  }

  CaseTriangles out;
  while (!next.empty()) {
    std::vector<int> loop;
    int e = next.begin()->first;
    while (next.count(e)) {
      loop.push_back(e);
      const int n = next[e];
      next.erase(e);
      e = n;
    }
    if (e != loop.front() || loop.size() < 3) throw ProcessingError("marching cubes table: open loop");
    bool done = false;
    for (std::size_t start = 0; start < loop.size() && !done; ++start) {
      bool ok = true;
      for (std::size_t i = 2; i + 1 < loop.size() && ok; ++i) {
        ok = !edges_share_face(loop[start], loop[(start + i) % loop.size()]);
      }
      if (ok) {
        for (const auto& t : fan(loop, start)) out.triangles.push_back(t);
        done = true;
      }
    }
    if (!done) {
      const int c = 12 + static_cast<int>(out.centroids.size());
      out.centroids.push_back(loop);
      for (std::size_t i = 0; i < loop.size(); ++i) {
        out.triangles.push_back({c, loop[i], loop[(i + 1) % loop.size()]});
      }
    }
  }
  return out;
}

const std::array<CaseTriangles, 256>& case_table() {
  static const std::array<CaseTriangles, 256> table = [] {
    std::array<CaseTriangles, 256> t;
    for (int c = 0; c < 256; ++c) t[c] = build_case(c);
    return t;
  }();
  return table;
}

}  // namespace

TriangleMesh marching_cubes(const LabelVolume& volume, Label label) {
  return marching_cubes(volume, std::vector<Label>{label}, label);
}

TriangleMesh marching_cubes(const LabelVolume& volume, const std::vector<Label>& label_set, Label mesh_label) {
  const GridMeta& meta = volume.meta();
  const int nx = meta.dims[0], ny = meta.dims[1], nz = meta.dims[2];
  std::array<bool, 256> member{};
  for (Label l : label_set) member[l] = true;

  TriangleMesh mesh;
  mesh.label = mesh_label;
  Index3 lo{nx, ny, nz}, hi{-1, -1, -1};
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!member[volume[i]]) continue;
    const Index3 p = meta.unravel(i);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  if (hi[0] < 0) return mesh;

  const auto inside = [&](int i, int j, int k) {
    return i >= 0 && j >= 0 && k >= 0 && i < nx && j < ny && k < nz && member[volume.at(i, j, k)];
  };
  // Grid points run from -1 to dims; the padded layout gives every edge a unique key.
  const long long px = nx + 2, py = ny + 2;
  const auto point_key = [&](int i, int j, int k) {
    return (static_cast<long long>(i) + 1) + px * ((static_cast<long long>(j) + 1) + py * (static_cast<long long>(k) + 1));
  };
  std::unordered_map<long long, std::uint32_t> vertex_of_edge;
  const auto& table = case_table();
  const bool flip = meta.direction.determinant() < 0;

  for (int k = lo[2] - 1; k <= hi[2]; ++k) {
    for (int j = lo[1] - 1; j <= hi[1]; ++j) {
      for (int i = lo[0] - 1; i <= hi[0]; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          if (inside(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))) config |= 1 << c;
        }
        if (config == 0 || config == 255) continue;
        const CaseTriangles& ct = table[config];
        std::array<std::uint32_t, 16> refs{};
        const auto edge_vertex = [&](int e) -> std::uint32_t {
          const Vec3 a = corner_pos(kEdges[e].a);
          const long long key = point_key(i + static_cast<int>(a.x()), j + static_cast<int>(a.y()),
                                          k + static_cast<int>(a.z())) * 3 + kEdges[e].axis;
          const auto [it, fresh] = vertex_of_edge.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
          if (fresh) mesh.vertices.push_back(voxel_to_world(meta, Vec3(i, j, k) + edge_mid(e)));
          return it->second;
        };
        std::array<bool, 16> have{};
        for (const auto& t : ct.triangles) {
          for (int r : t) {
            if (r < 12 && !have[r]) {
              refs[r] = edge_vertex(r);
              have[r] = true;
            }
          }
        }
        for (std::size_t c = 0; c < ct.centroids.size(); ++c) {
          Vec3 mid = Vec3::Zero();
          for (int e : ct.centroids[c]) mid += edge_mid(e);
          mid /= static_cast<double>(ct.centroids[c].size());
          refs[12 + c] = static_cast<std::uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(voxel_to_world(meta, Vec3(i, j, k) + mid));
        }
        for (const auto& t : ct.triangles) {
          if (flip) {
            mesh.triangles.push_back({refs[t[0]], refs[t[2]], refs[t[1]]});
          } else {
            mesh.triangles.push_back({refs[t[0]], refs[t[1]], refs[t[2]]});
          }
        }
      }
    }
  }
  return mesh;
}

}  // namespace mammoforge
