#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mammoforge/grid.hpp"
#include "mammoforge/volume.hpp"

namespace mammoforge {

using Rgb = std::array<double, 3>;

/// Triangle surface in world millimetres. Triangles wind counter-clockwise
/// seen from outside, so closed meshes have non-negative signed volume.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  Label label = labels::background;
  Rgb color{1.0, 1.0, 1.0};

  bool empty() const noexcept { return triangles.empty(); }
};

/// Sum of signed tetrahedron volumes against the origin (mm^3).
double signed_volume(const TriangleMesh& mesh);
double surface_area(const TriangleMesh& mesh);

struct MeshTopology {
  std::size_t edges = 0;
  std::size_t boundary_edges = 0;     // used by one triangle
  std::size_t nonmanifold_edges = 0;  // used by more than two triangles
  std::size_t misoriented_edges = 0;  // same direction in both triangles

  bool watertight() const noexcept { return edges > 0 && boundary_edges == 0 && nonmanifold_edges == 0; }
};

MeshTopology analyze_topology(const TriangleMesh& mesh);

/// V - E + F.
long long euler_characteristic(const TriangleMesh& mesh);

/// Drops out-of-range and zero-area triangles and unreferenced vertices.
TriangleMesh cleanup(const TriangleMesh& mesh, double min_area = 1e-12);

struct TaubinOptions {
  int iterations = 10;
  double lambda = 0.5;
  double mu = -0.53;

  void validate() const;
};

/// Alternating uniform-Laplacian shrink (lambda) / inflate (mu) passes.
/// Topology is unchanged.
TriangleMesh smooth_taubin(const TriangleMesh& mesh, const TaubinOptions& options = {});

/// Iso-surface of the indicator of `label` at 0.5, in world coordinates.
///
/// Cells outside the grid are treated as background so every mask yields a
/// closed, watertight surface. Vertices are shared between neighbouring
/// cubes. Returns an empty mesh when the label is absent.
TriangleMesh marching_cubes(const LabelVolume& volume, Label label);

/// Same, for the union of several labels.
TriangleMesh marching_cubes(const LabelVolume& volume, const std::vector<Label>& label_set, Label mesh_label);

}  // namespace mammoforge
