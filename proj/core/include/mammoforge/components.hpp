#pragma once

#include <cstddef>
#include <vector>

#include "mammoforge/volume.hpp"

namespace mammoforge {

enum class Connectivity { six = 6, twentysix = 26 };

struct Component {
  std::size_t voxel_count = 0;
  std::vector<std::size_t> voxels;  // linear indices, ascending
};

/// Connected components of the voxels carrying `label`, largest first.
/// Ties are broken by the smallest member index, so the order is deterministic.
std::vector<Component> connected_components(const LabelVolume& mask, Label label,
                                            Connectivity connectivity);

}  // namespace mammoforge
