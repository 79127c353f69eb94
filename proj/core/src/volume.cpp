#include "mammoforge/volume.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mammoforge/error.hpp"

namespace mammoforge {

namespace labels {

std::string_view name(Label label) {
  switch (label) {
    case background: return "background";
    case whole_breast: return "whole_breast";
    case fibroglandular: return "fibroglandular";
    case lesion: return "lesion";
    default: break;
  }
  throw ValidationError(fmt::format("label {} is not in the label dictionary", label));
}

bool is_registered(int label) noexcept { return label >= 0 && label <= max_label; }

}  // namespace labels

template <typename T>
Volume<T>::Volume(GridMeta meta, std::vector<T> data) : meta_(std::move(meta)), data_(std::move(data)) {
  meta_.validate();
  if (data_.size() != meta_.voxel_count()) {
    throw ValidationError(fmt::format("voxel count {} does not match grid dims {}x{}x{}",
                                      data_.size(), meta_.dims[0], meta_.dims[1], meta_.dims[2]));
  }
  if constexpr (std::is_floating_point_v<T>) {
    const auto bad = std::find_if(data_.begin(), data_.end(), [](T v) { return !std::isfinite(v); });
    if (bad != data_.end()) {
      throw ValidationError(
          fmt::format("non-finite voxel value at index {}", std::distance(data_.begin(), bad)));
    }
  } else {
    const auto bad = std::find_if(data_.begin(), data_.end(),
                                  [](T v) { return !labels::is_registered(static_cast<int>(v)); });
    if (bad != data_.end()) {
      throw ValidationError(fmt::format("label {} at index {} is not in the label dictionary",
                                        static_cast<int>(*bad), std::distance(data_.begin(), bad)));
    }
  }
}

template class Volume<float>;
template class Volume<Label>;

std::size_t count_label(const LabelVolume& volume, Label label) {
  const auto d = volume.data();
  return static_cast<std::size_t>(std::count(d.begin(), d.end(), label));
}

}  // namespace mammoforge
