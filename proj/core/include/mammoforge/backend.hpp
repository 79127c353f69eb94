#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "mammoforge/volume.hpp"

namespace mammoforge {

inline constexpr int kBackendProtocolVersion = 1;

/// External segmentation program speaking the file protocol:
/// `<executable> --workdir <dir>` reads input.nii + request.json and writes
/// output.nii + response.json.
struct BackendDescriptor {
  std::string name;
  std::filesystem::path executable;
  std::string model_id;
  int timeout_s = 600;
  std::set<Label> expected_labels;
  int max_concurrency = 1;  // simultaneous runs per descriptor name

  void validate() const;
};

struct BackendRunOptions {
  std::string case_id;
  std::filesystem::path work_root;  // defaults to the system temp directory
};

/// Runs one backend invocation in a fresh work directory.
///
/// The returned mask has exactly the input grid and only labels from
/// `expected_labels`. Non-zero exit, "error" status or timeout raise
/// BackendError(kind backend); malformed responses, geometry mismatch and
/// unexpected labels raise BackendError(kind protocol). The work directory is
/// removed on success and kept on failure.
LabelVolume run_backend(const BackendDescriptor& descriptor, const ImageVolume& input,
                        const std::set<Label>& request_labels, const BackendRunOptions& options = {});

}  // namespace mammoforge
