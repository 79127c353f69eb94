#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mammoforge/manifest.hpp"
#include "mammoforge/volume.hpp"

namespace mammoforge {

enum class Stage { ingested, preprocessed, registered, auto_segmented, revised, final_ };
enum class SplitRole { unassigned, train, test };
enum class Actor { pipeline, human };

std::string_view to_string(Stage stage) noexcept;
std::string_view to_string(SplitRole role) noexcept;
std::string_view to_string(Actor actor) noexcept;
Stage stage_from_string(std::string_view text);
SplitRole split_role_from_string(std::string_view text);
Actor actor_from_string(std::string_view text);

/// Mask keys used by the pipeline. Each key has its own provenance chain.
namespace mask_keys {
inline constexpr const char* anatomy = "anatomy";  // T1W grid, labels 1 and 2
inline constexpr const char* lesion = "lesion";    // DCE grid, label 3
inline constexpr const char* fused = "fused";      // T1W grid, labels 1 to 3
}  // namespace mask_keys

/// Sequence whose grid a mask lives on ("dce" for lesion masks, "t1w" otherwise).
std::string sequence_for_mask(std::string_view mask_key);

struct ProvenanceEvent {
  std::string timestamp;  // UTC, ISO-8601 with milliseconds
  Actor actor = Actor::pipeline;
  std::string action;
  std::string mask;                             // mask key
  std::optional<std::string> mask_hash_before;  // absent for the first version
  std::optional<std::string> mask_hash_after;

  friend bool operator==(const ProvenanceEvent&, const ProvenanceEvent&) = default;
};

std::string provenance_to_json_line(const ProvenanceEvent& event);
ProvenanceEvent provenance_from_json_line(const std::string& line);

struct CaseRecord {
  CaseManifest manifest;
  Stage stage = Stage::ingested;
  SplitRole split = SplitRole::unassigned;
  std::vector<ProvenanceEvent> provenance;
};

struct LabelEdit {
  std::size_t added = 0;
  std::size_t removed = 0;
  friend bool operator==(const LabelEdit&, const LabelEdit&) = default;
};

struct EditStats {
  std::size_t voxels_added = 0;    // background -> any label
  std::size_t voxels_removed = 0;  // any label -> background
  std::map<Label, LabelEdit> per_label;
  double dice_before_after = 1.0;  // foreground overlap of the two masks
};

/// Edit accounting between two masks on the same grid.
EditStats compute_edit_stats(const LabelVolume& before, const LabelVolume& after);

struct SplitAssignment {
  std::uint64_t seed = 0;
  double train_fraction = 0.75;
  std::vector<std::string> train;  // sorted
  std::vector<std::string> test;   // sorted
};

/// Deterministic case-level split: ids are sorted, shuffled with a seeded
/// Fisher-Yates pass and the first round(N * fraction) become training cases.
SplitAssignment compute_split(std::vector<std::string> case_ids, double train_fraction, std::uint64_t seed);
std::string split_to_json(const SplitAssignment& split);
SplitAssignment split_from_json(const std::string& text);

inline constexpr const char* kSplitFileName = "split.json";

/// Directory-backed case store: `<root>/<case_id>/` holds manifest.json,
/// state.json, provenance.jsonl and masks/<key>.nii.
class CaseStore {
 public:
  explicit CaseStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path case_dir(const std::string& case_id) const;
  std::filesystem::path mask_path(const std::string& case_id, const std::string& mask_key) const;

  bool has_case(const std::string& case_id) const;
  std::vector<std::string> case_ids() const;

  /// Registers a new case at stage `ingested`. Sequence paths in the manifest
  /// are stored as given (relative paths resolve against the case directory).
  void create_case(const CaseManifest& manifest);

  CaseRecord load(const std::string& case_id) const;
  Stage stage(const std::string& case_id) const;

  /// Moves the case forward. Re-entering the current stage is allowed,
  /// moving backward raises StateError.
  void advance_stage(const std::string& case_id, Stage stage);

  /// Absolute path of a manifest sequence.
  std::filesystem::path sequence_path(const std::string& case_id, const std::string& sequence) const;

  bool has_mask(const std::string& case_id, const std::string& mask_key) const;
  LabelVolume load_mask(const std::string& case_id, const std::string& mask_key) const;

  /// Writes (or replaces) a mask and appends a provenance event, atomically.
  void store_mask(const std::string& case_id, const std::string& mask_key, const LabelVolume& mask, Actor actor,
                  const std::string& action);

  void append_event(const std::string& case_id, const ProvenanceEvent& event);

  /// Checks the per-mask hash chain and that the last hash of each chain
  /// matches the stored mask. Returns a description of the first problem.
  std::optional<std::string> verify_provenance(const std::string& case_id) const;

  void set_split(const std::string& case_id, SplitRole role);

  /// Test hook called with a step name during multi-file commits; throwing
  /// from it simulates a failure at that point.
  using FaultHook = std::function<void(std::string_view step)>;
  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

  /// Keep a copy of every replaced mask under archive/ (off by default).
  void set_archive_revisions(bool enabled) noexcept { archive_revisions_ = enabled; }
  bool archive_revisions() const noexcept { return archive_revisions_; }

  /// Rolls back or completes a commit interrupted by a crash.
  void recover(const std::string& case_id) const;

  struct PendingFile {
    std::filesystem::path target;
    std::vector<std::uint8_t> bytes;
  };
  /// Replaces every file in `files` or none of them. Caller holds the case lock.
  void commit(const std::string& case_id, const std::vector<PendingFile>& files) const;

 private:
  void fault(std::string_view step) const {
    if (fault_hook_) fault_hook_(step);
  }
  void write_state(const std::string& case_id, Stage stage, SplitRole split) const;
  std::pair<Stage, SplitRole> read_state(const std::string& case_id) const;

  std::filesystem::path root_;
  FaultHook fault_hook_;
  bool archive_revisions_ = false;
};

/// Exclusive advisory lock on one case directory.
class CaseLock {
 public:
  CaseLock(const CaseStore& store, const std::string& case_id);
  ~CaseLock();
  CaseLock(const CaseLock&) = delete;
  CaseLock& operator=(const CaseLock&) = delete;

 private:
  int fd_ = -1;
};

/// Writes `<case_id>_img.nii` and `<case_id>_mask.nii` to `out_dir` and logs
/// the export. StateError when the mask does not exist.
void export_for_revision(CaseStore& store, const std::string& case_id, const std::filesystem::path& out_dir,
                         const std::string& mask_key = mask_keys::anatomy);

/// Replaces the stored mask with a human revision (overwrite policy) and
/// moves the case to `revised`. Geometry or label problems raise
/// ValidationError and leave the store untouched.
EditStats ingest_revision(CaseStore& store, const std::string& case_id, const std::filesystem::path& revised_mask,
                          const std::string& mask_key = mask_keys::anatomy);

/// Splits every case of the store, persists roles and `<root>/split.json`.
/// Requires stage >= revised; already assigned cases need `reassign`.
SplitAssignment split_dataset(CaseStore& store, double train_fraction, std::uint64_t seed, bool reassign = false);

}  // namespace mammoforge
