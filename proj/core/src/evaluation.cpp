#include "mammoforge/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mammoforge/distance.hpp"
#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

void require_same_grid(const LabelVolume& a, const LabelVolume& b) {
  if (!same_grid(a.meta(), b.meta())) {
    throw ValidationError(fmt::format("grid mismatch: {}x{}x{} vs {}x{}x{}", a.meta().dims[0], a.meta().dims[1],
                                      a.meta().dims[2], b.meta().dims[0], b.meta().dims[1], b.meta().dims[2]));
  }
}

using LabelLut = std::array<std::uint8_t, 256>;

LabelLut lookup(const std::set<Label>& label_set) {
  LabelLut lut{};
  for (Label l : label_set) lut[l] = 1;
  return lut;
}

// Boundary of the voxels whose label is in `lut`; same rule as boundary_of.
std::vector<std::uint8_t> label_boundary(const LabelVolume& v, const LabelLut& lut, std::size_t& count) {
  const Index3& dims = v.meta().dims;
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const std::size_t sy = static_cast<std::size_t>(nx), sz = sy * static_cast<std::size_t>(ny);
  const auto data = v.data();
  std::vector<std::uint8_t> out(data.size(), 0);
  count = 0;
  std::size_t idx = 0;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i, ++idx) {
        if (!lut[data[idx]]) continue;
        const bool interior = i > 0 && i + 1 < nx && j > 0 && j + 1 < ny && k > 0 && k + 1 < nz &&
                              lut[data[idx - 1]] && lut[data[idx + 1]] && lut[data[idx - sy]] &&
                              lut[data[idx + sy]] && lut[data[idx - sz]] && lut[data[idx + sz]];
        if (!interior) {
          out[idx] = 1;
          ++count;
        }
      }
    }
  }
  return out;
}

}  // namespace

double dice(const LabelVolume& a, const LabelVolume& b, Label label) {
  return dice(a, b, std::set<Label>{label});
}

double dice(const LabelVolume& a, const LabelVolume& b, const std::set<Label>& label_set) {
  require_same_grid(a, b);
  const LabelLut lut = lookup(label_set);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = lut[a[i]] != 0;
    const bool in_b = lut[b[i]] != 0;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<std::uint8_t> boundary_of(const std::vector<std::uint8_t>& mask, const Index3& dims) {
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  std::vector<std::uint8_t> out(mask.size(), 0);
  const auto at = [&](int i, int j, int k) -> bool {
    if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) return false;
    return mask[static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * (j + static_cast<std::size_t>(ny) * k)];
  };
  std::size_t idx = 0;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i, ++idx) {
        if (!mask[idx]) continue;
        out[idx] = !(at(i - 1, j, k) && at(i + 1, j, k) && at(i, j - 1, k) && at(i, j + 1, k) && at(i, j, k - 1) &&
                     at(i, j, k + 1));
      }
    }
  }
  return out;
}

double nsd(const LabelVolume& a, const LabelVolume& b, Label label, double tau_mm) {
  return nsd(a, b, std::set<Label>{label}, tau_mm);
}

double nsd(const LabelVolume& a, const LabelVolume& b, const std::set<Label>& label_set, double tau_mm) {
  require_same_grid(a, b);
  if (!(tau_mm > 0.0) || !std::isfinite(tau_mm)) {
    throw ValidationError(fmt::format("nsd tolerance must be positive, got {}", tau_mm));
  }
  const Index3& dims = a.meta().dims;
  const Vec3& h = a.meta().spacing;
  const LabelLut lut = lookup(label_set);
  std::size_t na = 0, nb = 0;
  const auto ba = label_boundary(a, lut, na);
  const auto bb = label_boundary(b, lut, nb);
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  const double tau2 = tau_mm * tau_mm;

  // Offsets within tau, with squared lengths summed in the same order as the
  // distance transform so both paths compare identical values.
  int r[3];
  for (int ax = 0; ax < 3; ++ax) r[ax] = std::min(static_cast<int>(std::floor(tau_mm / h[ax])), dims[ax] - 1);
  struct Offset {
    int dx, dy, dz;
    std::ptrdiff_t linear;
  };
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  std::vector<Offset> offsets;
  const std::size_t box = static_cast<std::size_t>(2 * r[0] + 1) * (2 * r[1] + 1) * (2 * r[2] + 1);
  if (box * (na + nb) <= 64 * ba.size()) {
    offsets.reserve(box);
    for (int dz = -r[2]; dz <= r[2]; ++dz)
      for (int dy = -r[1]; dy <= r[1]; ++dy)
        for (int dx = -r[0]; dx <= r[0]; ++dx) {
          const double x = dx * h[0], y = dy * h[1], z = dz * h[2];
          if (x * x + y * y + z * z <= tau2) {
            offsets.push_back({dx, dy, dz, dx + static_cast<std::ptrdiff_t>(nx) * (dy + static_cast<std::ptrdiff_t>(ny) * dz)});
          }
        }
    // Nearest offsets first: most boundary voxels find a partner early.
    std::sort(offsets.begin(), offsets.end(), [](const Offset& p, const Offset& q) {
      const int lp = p.dx * p.dx + p.dy * p.dy + p.dz * p.dz, lq = q.dx * q.dx + q.dy * q.dy + q.dz * q.dz;
      return lp != lq ? lp < lq : p.linear < q.linear;
    });
  }
  std::size_t within = 0;
  if (!offsets.empty()) {
    const auto near = [&](const std::vector<std::uint8_t>& other, std::size_t idx, int i, int j, int k) {
      for (const Offset& o : offsets) {
        if (static_cast<unsigned>(i + o.dx) >= static_cast<unsigned>(nx) ||
            static_cast<unsigned>(j + o.dy) >= static_cast<unsigned>(ny) ||
            static_cast<unsigned>(k + o.dz) >= static_cast<unsigned>(nz))
          continue;
        if (other[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(idx) + o.linear)]) return true;
      }
      return false;
    };
    std::size_t idx = 0;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i, ++idx) {
          if (ba[idx] && near(bb, idx, i, j, k)) ++within;
          if (bb[idx] && near(ba, idx, i, j, k)) ++within;
        }
  } else {
    const auto da = squared_distance_transform(ba, dims, h);
    const auto db = squared_distance_transform(bb, dims, h);
    for (std::size_t i = 0; i < ba.size(); ++i) {
      if (ba[i] && db[i] <= tau2) ++within;
      if (bb[i] && da[i] <= tau2) ++within;
    }
  }
  return static_cast<double>(within) / static_cast<double>(na + nb);
}

std::vector<Structure> default_structures() {
  return {
      {"whole_breast", {labels::whole_breast, labels::fibroglandular, labels::lesion}},
      {"fibroglandular", {labels::fibroglandular}},
      {"lesion", {labels::lesion}},
  };
}

std::pair<double, double> mean_and_sd(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

std::map<std::string, AggregateMetric> aggregate_metrics(const MetricReport& report) {
  std::map<std::string, AggregateMetric> out;
  for (const auto& name : report.structure_order) {
    std::vector<double> d, s;
    AggregateMetric agg;
    for (const auto& [case_id, by_structure] : report.per_case) {
      const auto it = by_structure.find(name);
      if (it == by_structure.end()) continue;
      d.push_back(it->second.dice);
      s.push_back(it->second.nsd);
      agg.n_both_empty += it->second.both_empty;
    }
    std::tie(agg.dice_mean, agg.dice_sd) = mean_and_sd(d);
    std::tie(agg.nsd_mean, agg.nsd_sd) = mean_and_sd(s);
    agg.n_cases = d.size();
    out[name] = agg;
  }
  return out;
}

MetricReport evaluate_cohort(const std::vector<EvaluationPair>& pairs, const std::vector<Structure>& structures,
                             double tau_mm) {
  if (pairs.empty()) throw ValidationError("evaluate_cohort needs at least one case");
  if (structures.empty()) throw ValidationError("evaluate_cohort needs at least one structure");
  if (!(tau_mm > 0.0)) throw ValidationError(fmt::format("nsd tolerance must be positive, got {}", tau_mm));
  MetricReport report;
  report.tau_mm = tau_mm;
  for (const auto& s : structures) report.structure_order.push_back(s.name);

  std::vector<const EvaluationPair*> order;
  for (const auto& p : pairs) order.push_back(&p);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->case_id < b->case_id; });
  for (const auto* p : order) {
    if (report.per_case.count(p->case_id)) {
      throw ValidationError(fmt::format("case '{}' appears twice in the cohort", p->case_id));
    }
    if (!same_grid(p->prediction.meta(), p->truth.meta())) {
      throw ValidationError(fmt::format("case '{}': prediction and truth grids differ", p->case_id));
    }
    auto& row = report.per_case[p->case_id];
    for (const auto& s : structures) {
      CaseMetric m;
      m.dice = dice(p->prediction, p->truth, s.labels);
      m.nsd = nsd(p->prediction, p->truth, s.labels, tau_mm);
      const auto present = [&](const LabelVolume& v) {
        return std::any_of(v.data().begin(), v.data().end(), [&](Label l) { return s.labels.count(l) != 0; });
      };
      m.both_empty = !present(p->prediction) && !present(p->truth);
      row[s.name] = m;
    }
  }
  report.aggregate = aggregate_metrics(report);
  return report;
}

std::string MetricReport::to_csv() const {
  std::string out = "structure,dice_mean,dice_sd,nsd_mean,nsd_sd,tau_mm,n_cases\n";
  for (const auto& name : structure_order) {
    const auto& a = aggregate.at(name);
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:g},{}\n", name, a.dice_mean, a.dice_sd, a.nsd_mean,
                       a.nsd_sd, tau_mm, a.n_cases);
  }
  return out;
}

std::string MetricReport::to_text() const {
  std::size_t width = 9;
  for (const auto& name : structure_order) width = std::max(width, name.size());
  std::string out = fmt::format("{:<{}}  {:>18}  {:>18}  {:>7}\n", "Structure", width, "DSC mean (SD)",
                                fmt::format("NSD@{:g}mm (SD)", tau_mm), "cases");
  for (const auto& name : structure_order) {
    const auto& a = aggregate.at(name);
    out += fmt::format("{:<{}}  {:>18}  {:>18}  {:>7}", name, width,
                       fmt::format("{:.3f} (±{:.3f})", a.dice_mean, a.dice_sd),
                       fmt::format("{:.3f} (±{:.3f})", a.nsd_mean, a.nsd_sd), a.n_cases);
    if (a.n_both_empty) out += fmt::format("  [{} both-empty]", a.n_both_empty);
    out += "\n";
  }
  return out;
}

}  // namespace mammoforge
