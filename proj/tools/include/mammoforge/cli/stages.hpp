#pragma once

#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mammoforge/cli/config.hpp"
#include "mammoforge/evaluation.hpp"
#include "mammoforge/hitl.hpp"

namespace mammoforge::cli {

/// Serialises log lines from concurrent case workers.
class Logger {
 public:
  explicit Logger(std::ostream& out) : out_(out) {}
  void line(const std::string& text);

 private:
  std::ostream& out_;
  std::mutex mutex_;
};

struct StageContext {
  CaseStore& store;
  const PipelineConfig& config;
  Logger& log;
  bool force = false;
};

// Files written by the stages, relative to the case directory.
namespace paths {
inline constexpr const char* t1w = "t1w.nii";
inline constexpr const char* dce = "dce.nii";
inline constexpr const char* preprocessed_t1w = "preprocessed/t1w.nii";
inline constexpr const char* preprocessed_dce = "preprocessed/dce.nii";
inline constexpr const char* transform = "registration/dce_to_t1w.json";
inline constexpr const char* registration_report = "registration/report.json";
inline constexpr const char* mesh_dir = "mesh";
inline constexpr const char* reference = "reference/fused.nii";
inline constexpr const char* evaluation_csv = "evaluation.csv";  // at the store root
inline constexpr const char* evaluation_txt = "evaluation.txt";
}  // namespace paths

/// Manifest mask entry naming the reference (ground truth) labels of a case.
inline constexpr const char* kReferenceMaskKey = "reference";

enum class Outcome { ran, skipped };

struct IngestRequest {
  std::string case_id;
  std::filesystem::path t1w;  // NIfTI file or DICOM series directory
  std::filesystem::path dce;
  std::optional<std::filesystem::path> reference;  // fused labels on the T1W grid
  std::string notes;
};

Outcome ingest_case(const StageContext& ctx, const IngestRequest& request);

/// Writes `count` synthetic cases `phantom_001...` with reference masks.
std::vector<std::string> generate_phantoms(const StageContext& ctx, int count, std::uint64_t seed);

Outcome preprocess_case(const StageContext& ctx, const std::string& case_id);
Outcome register_case(const StageContext& ctx, const std::string& case_id);

struct SegmentRequest {
  std::vector<std::string> backends;  // empty: classical baselines only
  std::optional<Index3> lesion_seed;
};

/// Produces the anatomy and lesion masks. Backends cover the mask of their
/// configured sequence; remaining masks come from the baselines when
/// `fill_with_baseline` is set.
Outcome segment_case(const StageContext& ctx, const std::string& case_id, const SegmentRequest& request,
                     bool fill_with_baseline);

Outcome complete_slices_case(const StageContext& ctx, const std::string& case_id,
                             const std::filesystem::path& annotations);

Outcome fuse_case(const StageContext& ctx, const std::string& case_id);
Outcome mesh_case(const StageContext& ctx, const std::string& case_id);

Outcome export_revision_case(const StageContext& ctx, const std::string& case_id, const std::string& mask_key,
                             const std::filesystem::path& out_dir);
Outcome ingest_revision_case(const StageContext& ctx, const std::string& case_id, const std::string& mask_key,
                             const std::filesystem::path& revised);

Outcome split_store(const StageContext& ctx, double fraction, std::uint64_t seed, bool reassign);

/// Evaluates `prediction_key` masks against the reference masks of every
/// case that has both; writes evaluation.csv/.txt at the store root.
MetricReport evaluate_store(const StageContext& ctx, const std::string& prediction_key = mask_keys::fused);

/// Runs preprocess, register, segment, fuse and mesh for every case with up
/// to `jobs` cases in flight, then evaluates when references exist. Stops
/// scheduling new cases after the first failure and rethrows it.
void run_pipeline(const StageContext& ctx, const std::vector<std::string>& case_ids, const SegmentRequest& segment,
                  int jobs);

}  // namespace mammoforge::cli
