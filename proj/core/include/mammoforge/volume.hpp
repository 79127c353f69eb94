#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mammoforge/grid.hpp"

namespace mammoforge {

using Label = std::uint8_t;

/// Registered label dictionary shared by every mask in the pipeline.
namespace labels {
inline constexpr Label background = 0;
inline constexpr Label whole_breast = 1;
inline constexpr Label fibroglandular = 2;
inline constexpr Label lesion = 3;
inline constexpr Label max_label = 3;

/// File-system friendly name, e.g. "fibroglandular". Throws for unknown labels.
std::string_view name(Label label);
bool is_registered(int label) noexcept;
}  // namespace labels

/// Immutable dense volume on a GridMeta.
///
/// Construction validates the grid and the payload: float volumes must be
/// finite everywhere, label volumes may only hold dictionary labels.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume(GridMeta meta, std::vector<T> data);

  static Volume filled(const GridMeta& meta, T value) {
    return Volume(meta, std::vector<T>(meta.voxel_count(), value));
  }

  const GridMeta& meta() const noexcept { return meta_; }
  std::span<const T> data() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

  T operator[](std::size_t i) const noexcept { return data_[i]; }
  T at(int i, int j, int k) const noexcept { return data_[meta_.index(i, j, k)]; }

  /// Mutable copy of the voxels, for building a derived volume.
  std::vector<T> copy_data() const { return data_; }

  /// Same geometry, new payload.
  Volume with_data(std::vector<T> data) const { return Volume(meta_, std::move(data)); }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.meta_.dims == b.meta_.dims && a.meta_.spacing == b.meta_.spacing &&
           a.meta_.origin == b.meta_.origin && a.meta_.direction == b.meta_.direction &&
           a.data_ == b.data_;
  }

 private:
  GridMeta meta_;
  std::vector<T> data_;
};

using ImageVolume = Volume<float>;
using LabelVolume = Volume<Label>;

extern template class Volume<float>;
extern template class Volume<Label>;

/// Number of voxels carrying `label`.
std::size_t count_label(const LabelVolume& volume, Label label);

}  // namespace mammoforge
