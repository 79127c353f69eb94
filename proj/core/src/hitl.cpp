#include "mammoforge/hitl.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mammoforge/error.hpp"
#include "mammoforge/evaluation.hpp"
#include "mammoforge/hash.hpp"
#include "mammoforge/nifti.hpp"

namespace mammoforge {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kStateFile = "state.json";
constexpr const char* kProvenanceFile = "provenance.jsonl";
constexpr const char* kJournalFile = ".txn.json";
constexpr const char* kLockFile = ".lock";

template <typename E, std::size_t N>
E parse_enum(std::string_view text, const std::array<E, N>& values, const char* what) {
  for (E v : values) {
    if (to_string(v) == text) return v;
  }
  throw ValidationError(fmt::format("unknown {} '{}'", what, text));
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

std::vector<std::uint8_t> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out.flush()) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

fs::path with_suffix(fs::path p, const char* suffix) {
  p += suffix;
  return p;
}

void validate_case_id(const std::string& id) {
  if (id.empty() || id == "." || id == ".." ||
      !std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'; })) {
    throw ValidationError(fmt::format("invalid case id '{}'", id));
  }
}

std::string state_json(Stage stage, SplitRole split) {
  json j;
  j["stage"] = std::string(to_string(stage));
  j["split"] = std::string(to_string(split));
  return j.dump(2) + "\n";
}

void rollback(const std::vector<std::pair<fs::path, bool>>& targets, const fs::path& journal) {
  std::error_code ec;
  for (const auto& [target, existed] : targets) {
    const auto bak = with_suffix(target, ".bak");
    if (fs::exists(bak, ec)) {
      fs::rename(bak, target, ec);
    } else if (!existed) {
      fs::remove(target, ec);
    }
    fs::remove(with_suffix(target, ".tmp"), ec);
  }
  fs::remove(journal, ec);
}

}  // namespace

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::ingested: return "ingested";
    case Stage::preprocessed: return "preprocessed";
    case Stage::registered: return "registered";
    case Stage::auto_segmented: return "auto_segmented";
    case Stage::revised: return "revised";
    case Stage::final_: return "final";
  }
  return "?";
}

std::string_view to_string(SplitRole role) noexcept {
  switch (role) {
    case SplitRole::unassigned: return "unassigned";
    case SplitRole::train: return "train";
    case SplitRole::test: return "test";
  }
  return "?";
}

std::string_view to_string(Actor actor) noexcept { return actor == Actor::human ? "human" : "pipeline"; }

Stage stage_from_string(std::string_view text) {
  return parse_enum(text,
                    std::array{Stage::ingested, Stage::preprocessed, Stage::registered, Stage::auto_segmented,
                               Stage::revised, Stage::final_},
                    "stage");
}

SplitRole split_role_from_string(std::string_view text) {
  return parse_enum(text, std::array{SplitRole::unassigned, SplitRole::train, SplitRole::test}, "split role");
}

Actor actor_from_string(std::string_view text) {
  return parse_enum(text, std::array{Actor::pipeline, Actor::human}, "actor");
}

std::string sequence_for_mask(std::string_view mask_key) {
  return mask_key == mask_keys::lesion ? "dce" : "t1w";
}

std::string provenance_to_json_line(const ProvenanceEvent& e) {
  json j;
  j["timestamp"] = e.timestamp;
  j["actor"] = std::string(to_string(e.actor));
  j["action"] = e.action;
  j["mask"] = e.mask;
  j["mask_hash_before"] = e.mask_hash_before ? json(*e.mask_hash_before) : json(nullptr);
  j["mask_hash_after"] = e.mask_hash_after ? json(*e.mask_hash_after) : json(nullptr);
  return j.dump();
}

ProvenanceEvent provenance_from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    ProvenanceEvent e;
    e.timestamp = j.at("timestamp").get<std::string>();
    e.actor = actor_from_string(j.at("actor").get<std::string>());
    e.action = j.at("action").get<std::string>();
    e.mask = j.at("mask").get<std::string>();
    if (!j.at("mask_hash_before").is_null()) e.mask_hash_before = j.at("mask_hash_before").get<std::string>();
    if (!j.at("mask_hash_after").is_null()) e.mask_hash_after = j.at("mask_hash_after").get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError(fmt::format("malformed provenance event: {}", ex.what()));
  }
}

EditStats compute_edit_stats(const LabelVolume& before, const LabelVolume& after) {
  if (!same_grid(before.meta(), after.meta())) throw ValidationError("edit statistics need masks on the same grid");
  EditStats s;
  for (int l = 1; l <= labels::max_label; ++l) s.per_label[static_cast<Label>(l)] = {};
  for (std::size_t i = 0; i < before.size(); ++i) {
    const Label o = before[i], n = after[i];
    if (o == n) continue;
    if (o == labels::background) ++s.voxels_added;
    if (n == labels::background) ++s.voxels_removed;
    if (n != labels::background) ++s.per_label[n].added;
    if (o != labels::background) ++s.per_label[o].removed;
  }
  s.dice_before_after = dice(before, after, std::set<Label>{labels::whole_breast, labels::fibroglandular, labels::lesion});
  return s;
}

SplitAssignment compute_split(std::vector<std::string> ids, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError(fmt::format("train fraction must be in (0, 1), got {}", train_fraction));
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ValidationError("duplicate case ids in split");
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(ids[i - 1], ids[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::lround(static_cast<double>(ids.size()) * train_fraction));
  SplitAssignment s;
  s.seed = seed;
  s.train_fraction = train_fraction;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::string split_to_json(const SplitAssignment& split) {
  json j;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["test"] = split.test;
  return j.dump(2) + "\n";
}

SplitAssignment split_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    SplitAssignment s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    const double n = static_cast<double>(s.train.size() + s.test.size());
    s.train_fraction = n > 0 ? static_cast<double>(s.train.size()) / n : 0.0;
    return s;
  } catch (const json::exception& ex) {
    throw ValidationError(fmt::format("malformed split file: {}", ex.what()));
  }
}

CaseStore::CaseStore(fs::path root) : root_(std::move(root)) {}

fs::path CaseStore::case_dir(const std::string& case_id) const {
  validate_case_id(case_id);
  return root_ / case_id;
}

fs::path CaseStore::mask_path(const std::string& case_id, const std::string& mask_key) const {
  validate_case_id(mask_key);
  return case_dir(case_id) / "masks" / (mask_key + ".nii");
}

bool CaseStore::has_case(const std::string& case_id) const {
  return fs::exists(case_dir(case_id) / kManifestFileName);
}

std::vector<std::string> CaseStore::case_ids() const {
  std::vector<std::string> ids;
  if (!fs::is_directory(root_)) return ids;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.is_directory() && fs::exists(entry.path() / kManifestFileName)) {
      ids.push_back(entry.path().filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void CaseStore::create_case(const CaseManifest& manifest) {
  const fs::path dir = case_dir(manifest.case_id);
  if (has_case(manifest.case_id)) throw StateError(fmt::format("case '{}' already exists", manifest.case_id));
  fs::create_directories(dir / "masks");
  const CaseManifest& m = manifest;
  write_state(m.case_id, Stage::ingested, SplitRole::unassigned);
  write_text_atomic(dir / kProvenanceFile, "");
  save_manifest(m, dir / kManifestFileName);
}

void CaseStore::write_state(const std::string& case_id, Stage stage, SplitRole split) const {
  write_text_atomic(case_dir(case_id) / kStateFile, state_json(stage, split));
}

std::pair<Stage, SplitRole> CaseStore::read_state(const std::string& case_id) const {
  const fs::path p = case_dir(case_id) / kStateFile;
  if (!fs::exists(p)) throw StateError(fmt::format("case '{}' does not exist", case_id));
  try {
    const json j = json::parse(read_text(p));
    return {stage_from_string(j.at("stage").get<std::string>()),
            split_role_from_string(j.at("split").get<std::string>())};
  } catch (const json::exception& ex) {
    throw ValidationError(fmt::format("case '{}': malformed state file: {}", case_id, ex.what()));
  }
}

CaseRecord CaseStore::load(const std::string& case_id) const {
  CaseRecord r;
  std::tie(r.stage, r.split) = read_state(case_id);
  r.manifest = load_manifest(case_dir(case_id) / kManifestFileName, false);
  std::istringstream in(read_text(case_dir(case_id) / kProvenanceFile));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) r.provenance.push_back(provenance_from_json_line(line));
  }
  return r;
}

Stage CaseStore::stage(const std::string& case_id) const { return read_state(case_id).first; }

void CaseStore::advance_stage(const std::string& case_id, Stage stage) {
  CaseLock lock(*this, case_id);
  recover(case_id);
  const auto [current, split] = read_state(case_id);
  if (stage < current) {
    throw StateError(fmt::format("case '{}' cannot move from {} back to {}", case_id, to_string(current),
                                 to_string(stage)));
  }
  if (stage != current) write_state(case_id, stage, split);
}

void CaseStore::set_split(const std::string& case_id, SplitRole role) {
  CaseLock lock(*this, case_id);
  recover(case_id);
  const auto [stage, split] = read_state(case_id);
  if (split != role) write_state(case_id, stage, role);
}

fs::path CaseStore::sequence_path(const std::string& case_id, const std::string& sequence) const {
  const CaseManifest m = load_manifest(case_dir(case_id) / kManifestFileName, false);
  const auto it = m.sequences.find(sequence);
  if (it == m.sequences.end()) {
    throw StateError(fmt::format("case '{}' has no '{}' sequence", case_id, sequence));
  }
  const fs::path p(it->second);
  return p.is_absolute() ? p : case_dir(case_id) / p;
}

bool CaseStore::has_mask(const std::string& case_id, const std::string& mask_key) const {
  return fs::exists(mask_path(case_id, mask_key));
}

LabelVolume CaseStore::load_mask(const std::string& case_id, const std::string& mask_key) const {
  if (!has_mask(case_id, mask_key)) {
    throw StateError(fmt::format("case '{}' has no '{}' mask", case_id, mask_key));
  }
  return read_nifti_labels(mask_path(case_id, mask_key));
}

void CaseStore::commit(const std::string& case_id, const std::vector<PendingFile>& files) const {
  const fs::path journal = case_dir(case_id) / kJournalFile;
  std::vector<std::pair<fs::path, bool>> targets;
  for (const auto& f : files) targets.emplace_back(f.target, fs::exists(f.target));
  try {
    for (const auto& f : files) write_file(with_suffix(f.target, ".tmp"), f.bytes);
    fault("write_tmp");
    json j = json::array();
    for (const auto& [t, existed] : targets) j.push_back({{"path", t.string()}, {"existed", existed}});
    write_text_atomic(journal, j.dump() + "\n");
    fault("journal");
    for (const auto& [t, existed] : targets) {
      if (existed) fs::rename(t, with_suffix(t, ".bak"));
      fault("backup");
    }
    for (const auto& [t, existed] : targets) {
      fs::rename(with_suffix(t, ".tmp"), t);
      fault("install");
    }
  } catch (...) {
    rollback(targets, journal);
    throw;
  }
  // Commit point: once the journal is gone the new files are authoritative.
  std::error_code ec;
  fs::remove(journal, ec);
  for (const auto& [t, existed] : targets) fs::remove(with_suffix(t, ".bak"), ec);
}

void CaseStore::recover(const std::string& case_id) const {
  const fs::path dir = case_dir(case_id);
  const fs::path journal = dir / kJournalFile;
  std::error_code ec;
  if (fs::exists(journal)) {
    std::vector<std::pair<fs::path, bool>> targets;
    try {
      for (const auto& t : json::parse(read_text(journal))) {
        targets.emplace_back(t.at("path").get<std::string>(), t.at("existed").get<bool>());
      }
    } catch (const json::exception&) {
      // A torn journal means nothing was renamed yet.
    }
    rollback(targets, journal);
  }
  for (const auto& entry : fs::recursive_directory_iterator(dir, ec)) {
    const auto ext = entry.path().extension();
    if (ext == ".bak" || ext == ".tmp") fs::remove(entry.path(), ec);
  }
}

namespace {

// Files for replacing one mask plus its provenance line and manifest entry.
std::vector<CaseStore::PendingFile> mask_update(const CaseStore& store, const std::string& case_id,
                                                const std::string& mask_key, const LabelVolume& mask,
                                                const ProvenanceEvent& event) {
  const fs::path dir = store.case_dir(case_id);
  CaseManifest m = load_manifest(dir / kManifestFileName, false);
  m.masks[mask_key] = "masks/" + mask_key + ".nii";
  std::string prov = read_text(dir / kProvenanceFile);
  prov += provenance_to_json_line(event) + "\n";
  return {
      {store.mask_path(case_id, mask_key), encode_nifti(mask)},
      {dir / kProvenanceFile, to_bytes(prov)},
      {dir / kManifestFileName, to_bytes(manifest_to_json(m))},
  };
}

std::optional<std::string> current_hash(const CaseStore& store, const std::string& case_id, const std::string& key) {
  if (!store.has_mask(case_id, key)) return std::nullopt;
  return mask_hash(store.load_mask(case_id, key));
}

}  // namespace

void CaseStore::store_mask(const std::string& case_id, const std::string& mask_key, const LabelVolume& mask,
                           Actor actor, const std::string& action) {
  CaseLock lock(*this, case_id);
  recover(case_id);
  if (!has_case(case_id)) throw StateError(fmt::format("case '{}' does not exist", case_id));
  ProvenanceEvent e{utc_now(), actor, action, mask_key, current_hash(*this, case_id, mask_key), mask_hash(mask)};
  commit(case_id, mask_update(*this, case_id, mask_key, mask, e));
}

void CaseStore::append_event(const std::string& case_id, const ProvenanceEvent& event) {
  CaseLock lock(*this, case_id);
  recover(case_id);
  const fs::path p = case_dir(case_id) / kProvenanceFile;
  commit(case_id, {{p, to_bytes(read_text(p) + provenance_to_json_line(event) + "\n")}});
}

std::optional<std::string> CaseStore::verify_provenance(const std::string& case_id) const {
  const CaseRecord r = load(case_id);
  std::map<std::string, std::optional<std::string>> last;
  for (std::size_t i = 0; i < r.provenance.size(); ++i) {
    const auto& e = r.provenance[i];
    const auto it = last.find(e.mask);
    const std::optional<std::string> expected = it == last.end() ? std::nullopt : it->second;
    if (e.mask_hash_before != expected) {
      return fmt::format("event {} ({} on '{}'): hash_before does not match the previous hash_after", i, e.action,
                         e.mask);
    }
    last[e.mask] = e.mask_hash_after;
  }
  for (const auto& [key, hash] : last) {
    if (current_hash(*this, case_id, key) != hash) {
      return fmt::format("mask '{}' does not match the last provenance hash", key);
    }
  }
  return std::nullopt;
}

CaseLock::CaseLock(const CaseStore& store, const std::string& case_id) {
  const fs::path dir = store.case_dir(case_id);
  if (!fs::is_directory(dir)) throw StateError(fmt::format("case '{}' does not exist", case_id));
  fd_ = ::open((dir / kLockFile).c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError(fmt::format("cannot open lock for case '{}'", case_id));
  if (::flock(fd_, LOCK_EX) != 0) {
    ::close(fd_);
    throw IoError(fmt::format("cannot lock case '{}'", case_id));
  }
}

CaseLock::~CaseLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

void export_for_revision(CaseStore& store, const std::string& case_id, const fs::path& out_dir,
                         const std::string& mask_key) {
  std::string hash;
  {
    CaseLock lock(store, case_id);
    store.recover(case_id);
    if (!store.has_mask(case_id, mask_key)) {
      throw StateError(fmt::format("case '{}' has no '{}' mask to export", case_id, mask_key));
    }
    const LabelVolume mask = store.load_mask(case_id, mask_key);
    const ImageVolume image = read_nifti_image(store.sequence_path(case_id, sequence_for_mask(mask_key)));
    if (!same_grid(image.meta(), mask.meta())) {
      throw ValidationError(fmt::format("case '{}': '{}' mask and image grids differ", case_id, mask_key));
    }
    fs::create_directories(out_dir);
    write_nifti(image, out_dir / (case_id + "_img.nii"));
    write_nifti(mask, out_dir / (case_id + "_mask.nii"));
    hash = mask_hash(mask);
  }
  store.append_event(case_id, {utc_now(), Actor::pipeline, "export_for_revision", mask_key, hash, hash});
}

EditStats ingest_revision(CaseStore& store, const std::string& case_id, const fs::path& revised_mask,
                          const std::string& mask_key) {
  CaseLock lock(store, case_id);
  store.recover(case_id);
  if (!store.has_mask(case_id, mask_key)) {
    throw StateError(fmt::format("case '{}' has no '{}' mask to revise", case_id, mask_key));
  }
  LabelVolume revised = read_nifti_labels(revised_mask);
  const LabelVolume current = store.load_mask(case_id, mask_key);
  if (!same_grid(current.meta(), revised.meta())) {
    throw ValidationError(fmt::format("case '{}': revised mask geometry does not match the stored mask", case_id));
  }
  // Keep the stored geometry bit-for-bit; only voxels change.
  revised = current.with_data(revised.copy_data());
  const EditStats stats = compute_edit_stats(current, revised);

  const std::string before = mask_hash(current);
  ProvenanceEvent e{utc_now(), Actor::human, "ingest_revision", mask_key, before, mask_hash(revised)};
  auto files = mask_update(store, case_id, mask_key, revised, e);
  const CaseRecord rec = store.load(case_id);
  const Stage next = std::max(rec.stage, Stage::revised);
  files.push_back({store.case_dir(case_id) / kStateFile, to_bytes(state_json(next, rec.split))});
  if (store.archive_revisions()) {
    const fs::path archived = store.case_dir(case_id) / "archive" /
                              fmt::format("{}-{}.nii", mask_key, before.substr(before.find(':') + 1, 16));
    fs::create_directories(archived.parent_path());
    files.push_back({archived, encode_nifti(current)});
  }
  store.commit(case_id, files);
  return stats;
}

SplitAssignment split_dataset(CaseStore& store, double train_fraction, std::uint64_t seed, bool reassign) {
  const auto ids = store.case_ids();
  if (ids.empty()) throw ValidationError("no cases to split");
  for (const auto& id : ids) {
    const CaseRecord r = store.load(id);
    if (r.stage < Stage::revised) {
      throw StateError(fmt::format("case '{}' is at stage {}; splitting needs revised cases", id, to_string(r.stage)));
    }
    if (r.split != SplitRole::unassigned && !reassign) {
      throw StateError(fmt::format("case '{}' is already assigned to {}; pass reassign to override", id,
                                   to_string(r.split)));
    }
  }
  const SplitAssignment split = compute_split(ids, train_fraction, seed);
  for (const auto& id : split.train) store.set_split(id, SplitRole::train);
  for (const auto& id : split.test) store.set_split(id, SplitRole::test);
  write_text_atomic(store.root() / kSplitFileName, split_to_json(split));
  return split;
}

}  // namespace mammoforge
