#include "mammoforge/fusion.hpp"

#include <algorithm>

#include "mammoforge/error.hpp"
#include "mammoforge/resample.hpp"

namespace mammoforge {

FusionResult fuse_labels(const LabelVolume& anatomy, const LabelVolume& lesion, const RigidTransform& xform) {
  if (std::all_of(anatomy.data().begin(), anatomy.data().end(), [](Label l) { return l == labels::background; })) {
    throw StateError("anatomy mask is empty");
  }
  const LabelVolume moved = resample_labels(lesion, anatomy.meta(), xform);
  std::vector<Label> out = anatomy.copy_data();
  std::size_t count = 0, outside = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (moved[i] != labels::lesion) continue;
    ++count;
    if (out[i] == labels::background) ++outside;
    out[i] = labels::lesion;
  }
  return {anatomy.with_data(std::move(out)), count, outside};
}

}  // namespace mammoforge
