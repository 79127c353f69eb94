#include "mammoforge/mesh.hpp"

#include <algorithm>
#include <map>

#include <Eigen/Geometry>
#include <fmt/format.h>

#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(std::min(a, b)) << 32) | std::max(a, b);
}

}  // namespace

double signed_volume(const TriangleMesh& mesh) {
  double v = 0.0;
  for (const auto& t : mesh.triangles) {
    v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
  }
  return v / 6.0;
}

double surface_area(const TriangleMesh& mesh) {
  double a = 0.0;
  for (const auto& t : mesh.triangles) {
    a += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]).norm();
  }
  return a;
}

MeshTopology analyze_topology(const TriangleMesh& mesh) {
  // Per undirected edge: use count and net direction (+1 for a<b, -1 otherwise).
  std::map<std::uint64_t, std::pair<int, int>> uses;
  for (const auto& t : mesh.triangles) {
    for (int i = 0; i < 3; ++i) {
      const std::uint32_t a = t[i], b = t[(i + 1) % 3];
      auto& u = uses[edge_key(a, b)];
      ++u.first;
      u.second += a < b ? 1 : -1;
    }
  }
  MeshTopology topo;
  topo.edges = uses.size();
  for (const auto& [key, u] : uses) {
    if (u.first == 1) ++topo.boundary_edges;
    if (u.first > 2) ++topo.nonmanifold_edges;
    if (u.first == 2 && u.second != 0) ++topo.misoriented_edges;
  }
  return topo;
}

long long euler_characteristic(const TriangleMesh& mesh) {
  std::vector<bool> used(mesh.vertices.size(), false);
  for (const auto& t : mesh.triangles) {
    for (auto v : t) used[v] = true;
  }
  const auto v = std::count(used.begin(), used.end(), true);
  return static_cast<long long>(v) - static_cast<long long>(analyze_topology(mesh).edges) +
         static_cast<long long>(mesh.triangles.size());
}

TriangleMesh cleanup(const TriangleMesh& mesh, double min_area) {
  TriangleMesh out;
  out.label = mesh.label;
  out.color = mesh.color;
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  const auto n = mesh.vertices.size();
  for (const auto& t : mesh.triangles) {
    if (t[0] >= n || t[1] >= n || t[2] >= n) continue;
    const Vec3& a = mesh.vertices[t[0]];
    const double area = 0.5 * (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm();
    if (!(area > min_area)) continue;
    std::array<std::uint32_t, 3> nt{};
    for (int i = 0; i < 3; ++i) {
      if (remap[t[i]] < 0) {
        remap[t[i]] = static_cast<std::int64_t>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[t[i]]);
      }
      nt[i] = static_cast<std::uint32_t>(remap[t[i]]);
    }
    out.triangles.push_back(nt);
  }
  return out;
}

void TaubinOptions::validate() const {
  if (iterations < 0) throw ValidationError(fmt::format("taubin iterations must be >= 0, got {}", iterations));
  if (!(lambda > 0.0 && lambda < -mu)) {
    throw ValidationError(fmt::format("taubin requires 0 < lambda < -mu, got lambda={} mu={}", lambda, mu));
  }
}

TriangleMesh smooth_taubin(const TriangleMesh& mesh, const TaubinOptions& options) {
  options.validate();
  TriangleMesh out = mesh;
  if (options.iterations == 0 || mesh.triangles.empty()) return out;

  std::vector<std::vector<std::uint32_t>> neighbours(mesh.vertices.size());
  for (const auto& t : mesh.triangles) {
    for (int i = 0; i < 3; ++i) {
      neighbours[t[i]].push_back(t[(i + 1) % 3]);
      neighbours[t[i]].push_back(t[(i + 2) % 3]);
    }
  }
  for (auto& n : neighbours) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }

  std::vector<Vec3> delta(out.vertices.size());
  const auto pass = [&](double factor) {
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
      delta[v].setZero();
      if (neighbours[v].empty()) continue;
      Vec3 mean = Vec3::Zero();
      for (auto u : neighbours[v]) mean += out.vertices[u];
      mean /= static_cast<double>(neighbours[v].size());
      delta[v] = factor * (mean - out.vertices[v]);
    }
    for (std::size_t v = 0; v < out.vertices.size(); ++v) out.vertices[v] += delta[v];
  };
  for (int it = 0; it < options.iterations; ++it) {
    pass(options.lambda);
    pass(options.mu);
  }
  return out;
}

}  // namespace mammoforge
