#include "mammoforge/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mammoforge/error.hpp"

namespace mammoforge {

using ordered_json = nlohmann::ordered_json;

std::string manifest_to_json(const CaseManifest& m) {
  ordered_json j;
  j["case_id"] = m.case_id;
  j["sequences"] = ordered_json::object();
  for (const auto& [k, v] : m.sequences) j["sequences"][k] = v;
  j["masks"] = ordered_json::object();
  for (const auto& [k, v] : m.masks) j["masks"][k] = v;
  j["notes"] = m.notes;
  return j.dump(2) + "\n";
}

CaseManifest manifest_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("manifest is not valid JSON: {}", e.what()), e.byte);
  }
  if (!j.is_object()) throw ValidationError("manifest must be a JSON object");
  static const std::set<std::string> kKeys = {"case_id", "sequences", "masks", "notes"};
  for (const auto& [k, _] : j.items()) {
    if (!kKeys.contains(k)) throw ValidationError(fmt::format("unknown manifest field '{}'", k));
  }
  CaseManifest m;
  try {
    m.case_id = j.at("case_id").get<std::string>();
    for (const auto& [k, v] : j.at("sequences").items()) {
      if (k != "t1w" && k != "dce") throw ValidationError(fmt::format("unknown sequence '{}'", k));
      m.sequences[k] = v.get<std::string>();
    }
    if (j.contains("masks")) {
      for (const auto& [k, v] : j.at("masks").items()) m.masks[k] = v.get<std::string>();
    }
    if (j.contains("notes")) m.notes = j.at("notes").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed manifest: {}", e.what()));
  }
  if (m.case_id.empty()) throw ValidationError("manifest case_id must be non-empty");
  if (m.case_id.find_first_of("/\\") != std::string::npos || m.case_id == "." || m.case_id == "..") {
    throw ValidationError(fmt::format("case_id '{}' is not a valid directory name", m.case_id));
  }
  return m;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", tmp.string()));
    out << contents;
    if (!out.flush()) throw IoError(fmt::format("failed writing '{}'", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot replace '{}': {}", path.string(), ec.message()));
}

CaseManifest load_manifest(const std::filesystem::path& path, bool check_files) {
  CaseManifest m = manifest_from_json(read_text(path));
  if (check_files) {
    const auto base = path.parent_path();
    const auto check = [&](const std::string& what, const std::string& p) {
      const std::filesystem::path full = std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p;
      if (!std::filesystem::exists(full)) {
        throw ValidationError(fmt::format("case '{}': {} file '{}' does not exist", m.case_id, what, full.string()));
      }
    };
    for (const auto& [k, p] : m.sequences) check(k, p);
    for (const auto& [k, p] : m.masks) check("mask " + k, p);
  }
  return m;
}

void save_manifest(const CaseManifest& manifest, const std::filesystem::path& path) {
  write_text_atomic(path, manifest_to_json(manifest));
}

std::vector<CaseManifest> load_dataset(const std::filesystem::path& root, bool check_files) {
  if (!std::filesystem::is_directory(root)) {
    throw IoError(fmt::format("dataset root '{}' is not a directory", root.string()));
  }
  std::vector<CaseManifest> out;
  std::set<std::string> seen;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    const auto manifest = entry.path() / kManifestFileName;
    if (!entry.is_directory() || !std::filesystem::exists(manifest)) continue;
    CaseManifest m = load_manifest(manifest, check_files);
    if (!seen.insert(m.case_id).second) {
      throw ValidationError(fmt::format("duplicate case_id '{}' in dataset", m.case_id));
    }
    out.push_back(std::move(m));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
  return out;
}

}  // namespace mammoforge
