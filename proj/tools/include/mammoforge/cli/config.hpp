#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "mammoforge/backend.hpp"
#include "mammoforge/mesh.hpp"
#include "mammoforge/mesh_io.hpp"
#include "mammoforge/registration.hpp"
#include "mammoforge/slice_completion.hpp"

namespace mammoforge::cli {

/// Scalar or array value of the key/value config format.
struct ConfigValue {
  using Scalar = std::variant<bool, std::int64_t, double, std::string>;
  std::variant<Scalar, std::vector<Scalar>> value;
  int line = 0;
};

/// section -> key -> value. Keys before any [section] go to section "".
using ConfigTable = std::map<std::string, std::map<std::string, ConfigValue>>;

/// Parses the TOML subset used for pipeline configs: [section] and
/// [section.sub] headers, `key = value` with strings, integers, floats,
/// booleans and single-line arrays of those, `#` comments.
ConfigTable parse_config_text(const std::string& text);

struct BackendEntry {
  BackendDescriptor descriptor;
  std::string sequence = "t1w";  // which preprocessed sequence the backend receives
};

enum class MeshFormat { stl, obj, both };

struct PipelineConfig {
  struct {
    double sigma_mm = 0.5;
    double p_low = 1.0;
    double p_high = 99.0;
  } preprocess;
  RegistrationConfig registration = [] {
    RegistrationConfig r;
    r.metric = Metric::mi;
    return r;
  }();
  struct {
    double tau_mm = 2.0;
  } evaluation;
  struct {
    double fraction = 0.75;
    std::uint64_t seed = 0;
  } split;
  struct {
    double lesion_delta = 0.2;
    SliceProfile slice_profile = SliceProfile::tapered;
  } segmentation;
  struct {
    TaubinOptions taubin;
    MeshFormat format = MeshFormat::both;
  } mesh;
  Palette palette = default_palette();
  struct {
    bool archive_revisions = false;
  } hitl;
  std::map<std::string, BackendEntry> backends;

  /// Throws ValidationError on any inconsistent value.
  void validate() const;
};

/// Applies a parsed table over the defaults. Unknown sections or keys and
/// wrongly typed values raise ValidationError naming the line.
PipelineConfig config_from_table(const ConfigTable& table, const std::filesystem::path& base_dir = {});

PipelineConfig load_config(const std::filesystem::path& path);

/// Config file text listing every default (printed by --help).
std::string default_config_text();

}  // namespace mammoforge::cli
