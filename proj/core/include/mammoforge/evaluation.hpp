#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mammoforge/volume.hpp"

namespace mammoforge {

inline constexpr double kDefaultNsdTolerance = 2.0;  // mm

/// Overlap of the voxels carrying `label`. Both empty -> 1.0.
double dice(const LabelVolume& a, const LabelVolume& b, Label label);

/// Overlap of the voxels whose label is in `label_set`. Both empty -> 1.0.
double dice(const LabelVolume& a, const LabelVolume& b, const std::set<Label>& label_set);

/// Normalized surface distance of the voxels carrying `label`.
///
/// Boundary voxels have at least one 6-neighbour outside the label (the grid
/// exterior counts as outside). Returns the pooled fraction of both boundaries
/// lying within `tau_mm` of the other boundary, distances measured between
/// voxel centres in physical units. Both empty -> 1.0, one empty -> 0.0.
double nsd(const LabelVolume& a, const LabelVolume& b, Label label, double tau_mm);
double nsd(const LabelVolume& a, const LabelVolume& b, const std::set<Label>& label_set, double tau_mm);

/// Boundary indicator (1 on boundary voxels) of a binary mask.
std::vector<std::uint8_t> boundary_of(const std::vector<std::uint8_t>& mask, const Index3& dims);

/// A structure reported in cohort tables and the set of labels composing it.
struct Structure {
  std::string name;
  std::set<Label> labels;
};

/// whole_breast = {1,2,3}, fibroglandular = {2}, lesion = {3}.
std::vector<Structure> default_structures();

struct CaseMetric {
  double dice = 0.0;
  double nsd = 0.0;
  bool both_empty = false;
};

struct AggregateMetric {
  double dice_mean = 0.0;
  double dice_sd = 0.0;
  double nsd_mean = 0.0;
  double nsd_sd = 0.0;
  std::size_t n_cases = 0;
  std::size_t n_both_empty = 0;
};

struct MetricReport {
  double tau_mm = kDefaultNsdTolerance;
  std::vector<std::string> structure_order;
  std::map<std::string, std::map<std::string, CaseMetric>> per_case;  // case_id -> structure -> metric
  std::map<std::string, AggregateMetric> aggregate;                   // structure -> summary

  std::string to_csv() const;
  std::string to_text() const;
};

struct EvaluationPair {
  std::string case_id;
  LabelVolume prediction;
  LabelVolume truth;
};

/// Per-case metrics plus mean and sample SD per structure. Cases are
/// aggregated in case_id order. Throws ValidationError naming the case when
/// a pair has mismatched grids.
MetricReport evaluate_cohort(const std::vector<EvaluationPair>& pairs, const std::vector<Structure>& structures,
                             double tau_mm = kDefaultNsdTolerance);

/// Recomputes the aggregate block from `report.per_case`.
std::map<std::string, AggregateMetric> aggregate_metrics(const MetricReport& report);

/// Mean and sample (n-1) standard deviation; SD is 0 for a single value.
std::pair<double, double> mean_and_sd(const std::vector<double>& values);

}  // namespace mammoforge
