#include "test_support.hpp"

#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

namespace mammoforge::testing {
namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  std::string templ = (fs::temp_directory_path() / fmt::format("mammoforge-{}-XXXXXX", tag)).string();
  if (::mkdtemp(templ.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = templ;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

GridMeta make_grid(Index3 dims, Vec3 spacing, Vec3 origin) {
  GridMeta m;
  m.dims = dims;
  m.spacing = spacing;
  m.origin = origin;
  return m;
}

GridMeta random_grid(std::mt19937_64& rng, int max_dim) {
  std::uniform_int_distribution<int> dim(1, max_dim);
  std::uniform_real_distribution<double> sp(0.3, 3.0), org(-100.0, 100.0), ang(-M_PI, M_PI);
  GridMeta m;
  m.dims = {dim(rng), dim(rng), dim(rng)};
  m.spacing = Vec3(sp(rng), sp(rng), sp(rng));
  m.origin = Vec3(org(rng), org(rng), org(rng));
  m.direction = rotation_zyx(Vec3(ang(rng), ang(rng) / 2, ang(rng)));
  return m;
}

LabelVolume random_mask(const GridMeta& meta, double fill, std::mt19937_64& rng, Label label) {
  std::bernoulli_distribution on(fill);
  std::vector<Label> d(meta.voxel_count());
  for (auto& v : d) v = on(rng) ? label : labels::background;
  return LabelVolume(meta, std::move(d));
}

LabelVolume ellipsoid_mask(const GridMeta& meta, const Vec3& c, const Vec3& r, Label label) {
  std::vector<Label> d(meta.voxel_count(), labels::background);
  for (int k = 0; k < meta.dims[2]; ++k) {
    for (int j = 0; j < meta.dims[1]; ++j) {
      for (int i = 0; i < meta.dims[0]; ++i) {
        const Vec3 p(i * meta.spacing.x(), j * meta.spacing.y(), k * meta.spacing.z());
        const Vec3 q = (p - c).cwiseQuotient(r);
        if (q.squaredNorm() <= 1.0) d[meta.index(i, j, k)] = label;
      }
    }
  }
  return LabelVolume(meta, std::move(d));
}

std::vector<std::uint8_t> indicator(const LabelVolume& v, const std::set<Label>& ls) {
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = ls.count(v[i]) ? 1 : 0;
  return out;
}

namespace oracle {

double dice(const LabelVolume& a, const LabelVolume& b, const std::set<Label>& ls) {
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = ls.count(a[i]) > 0;
    const bool y = ls.count(b[i]) > 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<Index3> boundary(const LabelVolume& v, const std::set<Label>& ls) {
  const GridMeta& m = v.meta();
  const auto inside = [&](int i, int j, int k) { return m.contains(i, j, k) && ls.count(v.at(i, j, k)) > 0; };
  std::vector<Index3> out;
  for (int k = 0; k < m.dims[2]; ++k) {
    for (int j = 0; j < m.dims[1]; ++j) {
      for (int i = 0; i < m.dims[0]; ++i) {
        if (!inside(i, j, k)) continue;
        if (!inside(i - 1, j, k) || !inside(i + 1, j, k) || !inside(i, j - 1, k) || !inside(i, j + 1, k) ||
            !inside(i, j, k - 1) || !inside(i, j, k + 1)) {
          out.push_back({i, j, k});
        }
      }
    }
  }
  return out;
}

double nsd(const LabelVolume& a, const LabelVolume& b, const std::set<Label>& ls, double tau) {
  const auto ba = boundary(a, ls);
  const auto bb = boundary(b, ls);
  if (ba.empty() && bb.empty()) return 1.0;
  if (ba.empty() || bb.empty()) return 0.0;
  const Vec3 s = a.meta().spacing;
  const auto within = [&](const Index3& p, const std::vector<Index3>& set) {
    for (const auto& q : set) {
      const double dx = (p[0] - q[0]) * s.x(), dy = (p[1] - q[1]) * s.y(), dz = (p[2] - q[2]) * s.z();
      if (std::sqrt(dx * dx + dy * dy + dz * dz) <= tau) return true;
    }
    return false;
  };
  std::size_t hit = 0;
  for (const auto& p : ba) hit += within(p, bb);
  for (const auto& p : bb) hit += within(p, ba);
  return static_cast<double>(hit) / static_cast<double>(ba.size() + bb.size());
}

std::vector<double> squared_distances(const std::vector<std::uint8_t>& f, const Index3& dims, const Vec3& s) {
  const std::size_t n = f.size();
  std::vector<double> out(n, std::numeric_limits<double>::infinity());
  std::vector<Index3> feats;
  const auto unravel = [&](std::size_t l) {
    return Index3{static_cast<int>(l % dims[0]), static_cast<int>((l / dims[0]) % dims[1]),
                  static_cast<int>(l / (static_cast<std::size_t>(dims[0]) * dims[1]))};
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (f[i]) feats.push_back(unravel(i));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Index3 p = unravel(i);
    for (const auto& q : feats) {
      const double dx = (p[0] - q[0]) * s.x(), dy = (p[1] - q[1]) * s.y(), dz = (p[2] - q[2]) * s.z();
      out[i] = std::min(out[i], dx * dx + dy * dy + dz * dz);
    }
  }
  return out;
}

EdgeCensus edge_census(const TriangleMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<bool>> uses;  // forward direction flags
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const std::uint32_t a = t[e], b = t[(e + 1) % 3];
      uses[{std::min(a, b), std::max(a, b)}].push_back(a < b);
    }
  }
  EdgeCensus c;
  for (const auto& [_, dirs] : uses) {
    if (dirs.size() == 1) ++c.once;
    else if (dirs.size() == 2) ++c.twice;
    else ++c.more;
    if (dirs.size() == 2 && dirs[0] == dirs[1]) ++c.same_direction_pairs;
  }
  return c;
}

}  // namespace oracle

TransformError transform_error(const RigidTransform& estimate, const RigidTransform& truth, const Vec3& center) {
  const Mat3 d = estimate.rotation() * truth.rotation().transpose();
  const double c = std::clamp((d.trace() - 1.0) / 2.0, -1.0, 1.0);
  return {std::acos(c) * 180.0 / M_PI, (estimate.apply(center) - truth.apply(center)).norm()};
}

namespace {

void put16(std::string& s, std::uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); }
void put32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }

void element(std::string& s, std::uint16_t group, std::uint16_t elem, const char* vr, std::string value) {
  const bool ui = std::strcmp(vr, "UI") == 0;
  if (value.size() % 2) value.push_back(ui ? '\0' : ' ');
  put16(s, group);
  put16(s, elem);
  s.append(vr, 2);
  const bool long_vr = std::strcmp(vr, "OW") == 0 || std::strcmp(vr, "OB") == 0 || std::strcmp(vr, "SQ") == 0;
  if (long_vr) {
    put16(s, 0);
    put32(s, static_cast<std::uint32_t>(value.size()));
  } else {
    put16(s, static_cast<std::uint16_t>(value.size()));
  }
  s += value;
}

std::string us(std::uint16_t v) { return std::string(reinterpret_cast<const char*>(&v), 2); }

std::string ds(std::initializer_list<double> values) {
  std::string out;
  for (double v : values) {
    if (!out.empty()) out += '\\';
    out += fmt::format("{:.6g}", v);
  }
  return out;
}

}  // namespace

void write_dicom_slice(const fs::path& path, const DicomSliceSpec& d) {
  std::string body;
  element(body, 0x0008, 0x0060, "CS", "MR");
  element(body, 0x0010, 0x0010, "PN", d.patient_name);
  element(body, 0x0018, 0x0050, "DS", ds({d.thickness}));
  element(body, 0x0020, 0x000E, "UI", d.series_uid);
  element(body, 0x0020, 0x0032, "DS", ds({d.position.x(), d.position.y(), d.position.z()}));
  element(body, 0x0020, 0x0037, "DS",
          ds({d.row_dir.x(), d.row_dir.y(), d.row_dir.z(), d.col_dir.x(), d.col_dir.y(), d.col_dir.z()}));
  element(body, 0x0028, 0x0002, "US", us(1));
  element(body, 0x0028, 0x0010, "US", us(static_cast<std::uint16_t>(d.rows)));
  element(body, 0x0028, 0x0011, "US", us(static_cast<std::uint16_t>(d.cols)));
  element(body, 0x0028, 0x0030, "DS", ds({d.row_spacing, d.col_spacing}));
  element(body, 0x0028, 0x0100, "US", us(16));
  element(body, 0x0028, 0x0103, "US", us(0));
  element(body, 0x0028, 0x1052, "DS", ds({d.intercept}));
  element(body, 0x0028, 0x1053, "DS", ds({d.slope}));
  std::string px(reinterpret_cast<const char*>(d.pixels.data()), d.pixels.size() * 2);
  element(body, 0x7FE0, 0x0010, "OW", px);

  std::string meta_elems;
  element(meta_elems, 0x0002, 0x0001, "OB", std::string("\0\1", 2));
  element(meta_elems, 0x0002, 0x0010, "UI", d.transfer_syntax);
  const auto meta_len = static_cast<std::uint32_t>(meta_elems.size());
  std::string meta;
  element(meta, 0x0002, 0x0000, "UL", std::string(reinterpret_cast<const char*>(&meta_len), 4));
  meta += meta_elems;

  std::ofstream out(path, std::ios::binary);
  out << std::string(128, '\0') << "DICM" << meta << body;
  if (!out) throw std::runtime_error("cannot write dicom fixture");
}

fs::path stub_helper_path() { return MAMMOFORGE_STUB_HELPER; }

fs::path write_stub_backend(const fs::path& dir, const std::string& mode, double threshold,
                            const std::string& prelude) {
  fs::create_directories(dir);
  const fs::path script = dir / fmt::format("backend-{}.sh", mode);
  std::ofstream out(script);
  out << "#!/bin/sh\n" << prelude;
  if (mode == "sleep") {
    out << "sleep 30\n";
  } else {
    out << fmt::format("exec '{}' --mode {} --threshold {} \"$@\"\n", stub_helper_path().string(), mode, threshold);
  }
  out.close();
  ::chmod(script.c_str(), 0755);
  return script;
}

}  // namespace mammoforge::testing
