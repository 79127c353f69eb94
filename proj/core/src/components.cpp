#include "mammoforge/components.hpp"

#include <algorithm>
#include <array>

namespace mammoforge {

std::vector<Component> connected_components(const LabelVolume& mask, Label label,
                                            Connectivity connectivity) {
  const GridMeta& meta = mask.meta();
  std::vector<Index3> offsets;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (connectivity == Connectivity::six && manhattan != 1) continue;
        offsets.push_back({dx, dy, dz});
      }
    }
  }

  std::vector<char> visited(mask.size(), 0);
  std::vector<Component> components;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (visited[seed] || mask[seed] != label) continue;
    Component comp;
    visited[seed] = 1;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      comp.voxels.push_back(cur);
      const Index3 p = meta.unravel(cur);
      for (const auto& o : offsets) {
        const int x = p[0] + o[0], y = p[1] + o[1], z = p[2] + o[2];
        if (!meta.contains(x, y, z)) continue;
        const std::size_t n = meta.index(x, y, z);
        if (!visited[n] && mask[n] == label) {
          visited[n] = 1;
          stack.push_back(n);
        }
      }
    }
    std::sort(comp.voxels.begin(), comp.voxels.end());
    comp.voxel_count = comp.voxels.size();
    components.push_back(std::move(comp));
  }
  std::stable_sort(components.begin(), components.end(),
                   [](const Component& a, const Component& b) { return a.voxel_count > b.voxel_count; });
  return components;
}

}  // namespace mammoforge
