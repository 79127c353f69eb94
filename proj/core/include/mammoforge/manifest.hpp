#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mammoforge {

/// One case's input sequences and masks. Paths may be relative to the
/// directory holding the manifest. No patient identifiers are stored.
struct CaseManifest {
  std::string case_id;
  std::map<std::string, std::string> sequences;  // "t1w", "dce"
  std::map<std::string, std::string> masks;      // mask source -> path
  std::string notes;

  friend bool operator==(const CaseManifest&, const CaseManifest&) = default;
};

inline constexpr const char* kManifestFileName = "manifest.json";

std::string manifest_to_json(const CaseManifest& manifest);
CaseManifest manifest_from_json(const std::string& text);

/// Loads and validates a manifest; with `check_files` every referenced path
/// must exist (resolved against the manifest's directory).
CaseManifest load_manifest(const std::filesystem::path& path, bool check_files = true);
void save_manifest(const CaseManifest& manifest, const std::filesystem::path& path);

/// Manifests of every case directory under `root`, sorted by case_id.
/// Duplicate case ids are rejected.
std::vector<CaseManifest> load_dataset(const std::filesystem::path& root, bool check_files = true);

/// Writes `contents` to a sibling temporary file and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text(const std::filesystem::path& path);

}  // namespace mammoforge
