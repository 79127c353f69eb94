#include "mammoforge/cli/config.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "mammoforge/error.hpp"
#include "mammoforge/manifest.hpp"

namespace mammoforge::cli {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

[[noreturn]] void bad(int line, const std::string& what) {
  throw ValidationError(fmt::format("config line {}: {}", line, what));
}

// Removes a trailing comment outside of string literals.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

ConfigValue::Scalar parse_scalar(const std::string& text, int line) {
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) {
        const char c = text[++i];
        out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
      } else {
        out += text[i];
      }
    }
    return out;
  }
  if (text == "true") return true;
  if (text == "false") return false;
  std::string digits;
  for (char c : text) {
    if (c != '_') digits += c;
  }
  std::int64_t i = 0;
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), i);
  if (ec == std::errc() && p == digits.data() + digits.size()) return i;
  double d = 0.0;
  auto [q, ec2] = std::from_chars(digits.data(), digits.data() + digits.size(), d);
  if (ec2 == std::errc() && q == digits.data() + digits.size() && !digits.empty()) return d;
  bad(line, fmt::format("cannot parse value '{}'", text));
}

std::vector<std::string> split_array(const std::string& inner, int line) {
  std::vector<std::string> items;
  std::string cur;
  bool in_string = false;
  for (std::size_t i = 0; i < inner.size(); ++i) {
    const char c = inner[i];
    if (c == '"' && (i == 0 || inner[i - 1] != '\\')) in_string = !in_string;
    if (c == ',' && !in_string) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_string) bad(line, "unterminated string");
  if (!trim(cur).empty()) items.push_back(trim(cur));
  for (const auto& it : items) {
    if (it.empty()) bad(line, "empty array element");
  }
  return items;
}

// Typed accessors.
struct Reader {
  const std::map<std::string, ConfigValue>& keys;
  std::string section;

  const ConfigValue::Scalar& scalar(const std::string& key, const ConfigValue& v) const {
    if (const auto* s = std::get_if<ConfigValue::Scalar>(&v.value)) return *s;
    bad(v.line, fmt::format("[{}] {} must be a single value", section, key));
  }
  double number(const std::string& key, const ConfigValue& v) const {
    const auto& s = scalar(key, v);
    if (const auto* i = std::get_if<std::int64_t>(&s)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&s)) return *d;
    bad(v.line, fmt::format("[{}] {} must be a number", section, key));
  }
  std::int64_t integer(const std::string& key, const ConfigValue& v) const {
    if (const auto* i = std::get_if<std::int64_t>(&scalar(key, v))) return *i;
    bad(v.line, fmt::format("[{}] {} must be an integer", section, key));
  }
  bool boolean(const std::string& key, const ConfigValue& v) const {
    if (const auto* b = std::get_if<bool>(&scalar(key, v))) return *b;
    bad(v.line, fmt::format("[{}] {} must be true or false", section, key));
  }
  std::string string(const std::string& key, const ConfigValue& v) const {
    if (const auto* s = std::get_if<std::string>(&scalar(key, v))) return *s;
    bad(v.line, fmt::format("[{}] {} must be a string", section, key));
  }
  std::vector<double> numbers(const std::string& key, const ConfigValue& v) const {
    const auto* a = std::get_if<std::vector<ConfigValue::Scalar>>(&v.value);
    if (!a) bad(v.line, fmt::format("[{}] {} must be an array", section, key));
    std::vector<double> out;
    for (const auto& s : *a) {
      if (const auto* i = std::get_if<std::int64_t>(&s)) {
        out.push_back(static_cast<double>(*i));
      } else if (const auto* d = std::get_if<double>(&s)) {
        out.push_back(*d);
      } else {
        bad(v.line, fmt::format("[{}] {} must contain numbers", section, key));
      }
    }
    return out;
  }
};

Label label_by_name(const std::string& name, int line) {
  for (int l = 1; l <= labels::max_label; ++l) {
    if (labels::name(static_cast<Label>(l)) == name) return static_cast<Label>(l);
  }
  bad(line, fmt::format("unknown label '{}'", name));
}

}  // namespace

ConfigTable parse_config_text(const std::string& text) {
  ConfigTable table;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  table[section];
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) bad(line, "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (table.count(section) && !table[section].empty()) bad(line, fmt::format("duplicate section [{}]", section));
      table[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) bad(line, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty() || value.empty()) bad(line, "expected key = value");
    if (table[section].count(key)) bad(line, fmt::format("duplicate key '{}'", key));
    ConfigValue v;
    v.line = line;
    if (value.front() == '[') {
      if (value.back() != ']') bad(line, "arrays must close on the same line");
      std::vector<ConfigValue::Scalar> items;
      for (const auto& item : split_array(value.substr(1, value.size() - 2), line)) {
        items.push_back(parse_scalar(item, line));
      }
      v.value = std::move(items);
    } else {
      v.value = parse_scalar(value, line);
    }
    table[section][key] = std::move(v);
  }
  return table;
}

PipelineConfig config_from_table(const ConfigTable& table, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  for (const auto& [section, keys] : table) {
    const Reader r{keys, section};
    const auto unknown = [&](const std::string& key, const ConfigValue& v) {
      bad(v.line, fmt::format("unknown key '{}' in [{}]", key, section));
    };
    if (section.empty()) {
      for (const auto& [k, v] : keys) bad(v.line, fmt::format("key '{}' must be inside a section", k));
    } else if (section == "preprocess") {
      for (const auto& [k, v] : keys) {
        if (k == "sigma_mm") c.preprocess.sigma_mm = r.number(k, v);
        else if (k == "p_low") c.preprocess.p_low = r.number(k, v);
        else if (k == "p_high") c.preprocess.p_high = r.number(k, v);
        else unknown(k, v);
      }
    } else if (section == "registration") {
      for (const auto& [k, v] : keys) {
        if (k == "metric") {
          const std::string m = r.string(k, v);
          if (m == "ncc") c.registration.metric = Metric::ncc;
          else if (m == "mi") c.registration.metric = Metric::mi;
          else bad(v.line, fmt::format("metric must be \"ncc\" or \"mi\", got \"{}\"", m));
        } else if (k == "pyramid_levels") {
          c.registration.pyramid_levels = static_cast<int>(r.integer(k, v));
        } else if (k == "max_iters_per_level") {
          c.registration.max_iters_per_level = static_cast<int>(r.integer(k, v));
        } else if (k == "param_tolerance") {
          c.registration.param_tolerance = r.number(k, v);
        } else if (k == "sample_fraction") {
          c.registration.sample_fraction = r.number(k, v);
        } else if (k == "seed") {
          c.registration.seed = static_cast<std::uint64_t>(r.integer(k, v));
        } else {
          unknown(k, v);
        }
      }
    } else if (section == "evaluation") {
      for (const auto& [k, v] : keys) {
        if (k == "tau_mm") c.evaluation.tau_mm = r.number(k, v);
        else unknown(k, v);
      }
    } else if (section == "split") {
      for (const auto& [k, v] : keys) {
        if (k == "fraction") c.split.fraction = r.number(k, v);
        else if (k == "seed") c.split.seed = static_cast<std::uint64_t>(r.integer(k, v));
        else unknown(k, v);
      }
    } else if (section == "segmentation") {
      for (const auto& [k, v] : keys) {
        if (k == "lesion_delta") {
          c.segmentation.lesion_delta = r.number(k, v);
        } else if (k == "slice_profile") {
          const std::string p = r.string(k, v);
          if (p == "tapered") c.segmentation.slice_profile = SliceProfile::tapered;
          else if (p == "linear") c.segmentation.slice_profile = SliceProfile::linear;
          else bad(v.line, fmt::format("slice_profile must be \"tapered\" or \"linear\", got \"{}\"", p));
        } else {
          unknown(k, v);
        }
      }
    } else if (section == "mesh") {
      for (const auto& [k, v] : keys) {
        if (k == "taubin_iterations") {
          c.mesh.taubin.iterations = static_cast<int>(r.integer(k, v));
        } else if (k == "taubin_lambda") {
          c.mesh.taubin.lambda = r.number(k, v);
        } else if (k == "taubin_mu") {
          c.mesh.taubin.mu = r.number(k, v);
        } else if (k == "format") {
          const std::string f = r.string(k, v);
          if (f == "stl") c.mesh.format = MeshFormat::stl;
          else if (f == "obj") c.mesh.format = MeshFormat::obj;
          else if (f == "both") c.mesh.format = MeshFormat::both;
          else bad(v.line, fmt::format("format must be \"stl\", \"obj\" or \"both\", got \"{}\"", f));
        } else {
          unknown(k, v);
        }
      }
    } else if (section == "palette") {
      for (const auto& [k, v] : keys) {
        const Label l = label_by_name(k, v.line);
        const auto rgba = r.numbers(k, v);
        if (rgba.size() != 3 && rgba.size() != 4) bad(v.line, "palette entries are [r, g, b] or [r, g, b, alpha]");
        c.palette[l] = {{rgba[0], rgba[1], rgba[2]}, rgba.size() == 4 ? rgba[3] : 1.0};
      }
    } else if (section == "hitl") {
      for (const auto& [k, v] : keys) {
        if (k == "archive_revisions") c.hitl.archive_revisions = r.boolean(k, v);
        else unknown(k, v);
      }
    } else if (section.rfind("backend.", 0) == 0) {
      BackendEntry e;
      e.descriptor.name = section.substr(8);
      for (const auto& [k, v] : keys) {
        if (k == "executable") {
          std::filesystem::path p = r.string(k, v);
          if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
          e.descriptor.executable = p;
        } else if (k == "model_id") {
          e.descriptor.model_id = r.string(k, v);
        } else if (k == "timeout_s") {
          e.descriptor.timeout_s = static_cast<int>(r.integer(k, v));
        } else if (k == "max_concurrency") {
          e.descriptor.max_concurrency = static_cast<int>(r.integer(k, v));
        } else if (k == "expected_labels") {
          for (double l : r.numbers(k, v)) {
            if (l != std::floor(l) || !labels::is_registered(static_cast<int>(l))) {
              bad(v.line, fmt::format("expected_labels: {} is not a dictionary label", l));
            }
            e.descriptor.expected_labels.insert(static_cast<Label>(l));
          }
        } else if (k == "sequence") {
          e.sequence = r.string(k, v);
        } else {
          unknown(k, v);
        }
      }
      c.backends[e.descriptor.name] = e;
    } else {
      const int line = keys.empty() ? 0 : keys.begin()->second.line;
      throw ValidationError(fmt::format("config: unknown section [{}]{}", section,
                                        line ? fmt::format(" (line {})", line) : ""));
    }
  }
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (!(preprocess.sigma_mm > 0.0)) throw ValidationError("config: [preprocess] sigma_mm must be > 0");
  if (!(preprocess.p_low >= 0.0 && preprocess.p_low < preprocess.p_high && preprocess.p_high <= 100.0)) {
    throw ValidationError("config: [preprocess] needs 0 <= p_low < p_high <= 100");
  }
  registration.validate();
  if (!(evaluation.tau_mm > 0.0)) throw ValidationError("config: [evaluation] tau_mm must be > 0");
  if (!(split.fraction > 0.0 && split.fraction < 1.0)) throw ValidationError("config: [split] fraction must be in (0, 1)");
  if (!(segmentation.lesion_delta >= 0.0)) throw ValidationError("config: [segmentation] lesion_delta must be >= 0");
  mesh.taubin.validate();
  for (const auto& [label, m] : palette) {
    for (double ch : m.diffuse) {
      if (!(ch >= 0.0 && ch <= 1.0)) throw ValidationError("config: [palette] colour channels must be in [0, 1]");
    }
    if (!(m.alpha >= 0.0 && m.alpha <= 1.0)) throw ValidationError("config: [palette] alpha must be in [0, 1]");
  }
  for (const auto& [name, e] : backends) {
    e.descriptor.validate();
    if (e.descriptor.executable.empty()) {
      throw ValidationError(fmt::format("config: [backend.{}] executable is required", name));
    }
    if (e.sequence != "t1w" && e.sequence != "dce") {
      throw ValidationError(fmt::format("config: [backend.{}] sequence must be \"t1w\" or \"dce\"", name));
    }
  }
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError(fmt::format("config file '{}' not found", path.string()));
  return config_from_table(parse_config_text(read_text(path)), path.parent_path());
}

std::string default_config_text() {
  const PipelineConfig c;
  std::string out;
  out += fmt::format("[preprocess]\nsigma_mm = {}\np_low = {}\np_high = {}\n\n", c.preprocess.sigma_mm,
                     c.preprocess.p_low, c.preprocess.p_high);
  out += fmt::format(
      "[registration]\nmetric = \"{}\"\npyramid_levels = {}\nmax_iters_per_level = {}\nparam_tolerance = {}\n"
      "sample_fraction = {}\nseed = {}\n\n",
      c.registration.metric == Metric::mi ? "mi" : "ncc", c.registration.pyramid_levels,
      c.registration.max_iters_per_level, c.registration.param_tolerance, c.registration.sample_fraction,
      c.registration.seed);
  out += fmt::format("[evaluation]\ntau_mm = {}\n\n", c.evaluation.tau_mm);
  out += fmt::format("[split]\nfraction = {}\nseed = {}\n\n", c.split.fraction, c.split.seed);
  out += fmt::format("[segmentation]\nlesion_delta = {}\nslice_profile = \"tapered\"\n\n", c.segmentation.lesion_delta);
  out += fmt::format("[mesh]\ntaubin_iterations = {}\ntaubin_lambda = {}\ntaubin_mu = {}\nformat = \"both\"\n\n",
                     c.mesh.taubin.iterations, c.mesh.taubin.lambda, c.mesh.taubin.mu);
  out += "[palette]\n";
  for (const auto& [l, m] : c.palette) {
    out += fmt::format("{} = [{}, {}, {}, {}]\n", labels::name(l), m.diffuse[0], m.diffuse[1], m.diffuse[2], m.alpha);
  }
  out += fmt::format("\n[hitl]\narchive_revisions = {}\n\n", c.hitl.archive_revisions);
  out +=
      "# [backend.<name>]\n# executable = \"/path/to/backend\"\n# model_id = \"model\"\n# timeout_s = 600\n"
      "# expected_labels = [1, 2]\n# sequence = \"t1w\"\n# max_concurrency = 1\n";
  return out;
}

}  // namespace mammoforge::cli
