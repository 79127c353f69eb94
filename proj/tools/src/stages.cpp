#include "mammoforge/cli/stages.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "mammoforge/backend.hpp"
#include "mammoforge/dicom.hpp"
#include "mammoforge/error.hpp"
#include "mammoforge/fusion.hpp"
#include "mammoforge/hash.hpp"
#include "mammoforge/manifest.hpp"
#include "mammoforge/mesh.hpp"
#include "mammoforge/mesh_io.hpp"
#include "mammoforge/nifti.hpp"
#include "mammoforge/phantom.hpp"
#include "mammoforge/preprocess.hpp"
#include "mammoforge/registration.hpp"
#include "mammoforge/segmentation.hpp"
#include "mammoforge/slice_completion.hpp"
#include "mammoforge/transform_io.hpp"

namespace mammoforge::cli {
namespace fs = std::filesystem;
using json = nlohmann::json;

void Logger::line(const std::string& text) {
  const std::lock_guard lock(mutex_);
  out_ << text << '\n';
  out_.flush();
}

namespace {

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", tmp.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("failed writing '{}'", tmp.string()));
  }
  fs::rename(tmp, path);
}

template <typename V>
void write_volume(const V& volume, const fs::path& path) {
  write_file_atomic(path, encode_nifti(volume));
}

ImageVolume read_image_input(const fs::path& path) {
  if (fs::is_directory(path)) return read_dicom_series(path);
  if (!fs::exists(path)) throw ValidationError(fmt::format("input '{}' does not exist", path.string()));
  return read_nifti_image(path);
}

void advance_to(CaseStore& store, const std::string& id, Stage stage) {
  if (store.stage(id) < stage) store.advance_stage(id, stage);
}

fs::path case_file(const StageContext& ctx, const std::string& id, const char* rel) {
  return ctx.store.case_dir(id) / rel;
}

ImageVolume require_image(const StageContext& ctx, const std::string& id, const char* rel, const char* stage) {
  const fs::path p = case_file(ctx, id, rel);
  if (!fs::exists(p)) throw StateError(fmt::format("case '{}': missing {} (run `{}` first)", id, rel, stage));
  return read_nifti_image(p);
}

void require_case(const StageContext& ctx, const std::string& id) {
  if (!ctx.store.has_case(id)) throw StateError(fmt::format("case '{}' does not exist", id));
}

std::string mask_key_for_sequence(const std::string& sequence) {
  return sequence == "dce" ? mask_keys::lesion : mask_keys::anatomy;
}

}  // namespace

Outcome ingest_case(const StageContext& ctx, const IngestRequest& request) {
  if (request.case_id.empty()) throw ValidationError("ingest needs a case id");
  if (ctx.store.has_case(request.case_id)) {
    if (!ctx.force) {
      ctx.log.line(fmt::format("ingest {}: exists, skipped", request.case_id));
      return Outcome::skipped;
    }
  }
  // Read and check everything before touching the store.
  const ImageVolume t1w = read_image_input(request.t1w);
  const ImageVolume dce = read_image_input(request.dce);
  std::optional<LabelVolume> reference;
  if (request.reference) {
    reference = read_nifti_labels(*request.reference);
    if (!same_grid(reference->meta(), t1w.meta())) {
      throw ValidationError(fmt::format("case '{}': reference mask is not on the T1W grid", request.case_id));
    }
  }
  const fs::path dir = ctx.store.case_dir(request.case_id);
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);
  write_volume(t1w, dir / paths::t1w);
  write_volume(dce, dir / paths::dce);
  CaseManifest m;
  m.case_id = request.case_id;
  m.sequences = {{"t1w", paths::t1w}, {"dce", paths::dce}};
  m.notes = request.notes;
  if (reference) {
    write_volume(*reference, dir / paths::reference);
    m.masks[kReferenceMaskKey] = paths::reference;
  }
  ctx.store.create_case(m);
  ctx.log.line(fmt::format("ingest {}: t1w {}x{}x{}, dce {}x{}x{}", request.case_id, t1w.meta().dims[0],
                           t1w.meta().dims[1], t1w.meta().dims[2], dce.meta().dims[0], dce.meta().dims[1],
                           dce.meta().dims[2]));
  return Outcome::ran;
}

std::vector<std::string> generate_phantoms(const StageContext& ctx, int count, std::uint64_t seed) {
  if (count < 1) throw ValidationError("phantom --cases must be >= 1");
  std::vector<std::string> ids;
  for (int i = 0; i < count; ++i) {
    const std::string id = fmt::format("phantom_{:03d}", i + 1);
    ids.push_back(id);
    if (ctx.store.has_case(id) && !ctx.force) {
      ctx.log.line(fmt::format("phantom {}: exists, skipped", id));
      continue;
    }
    PhantomOptions opt;
    opt.seed = seed + static_cast<std::uint64_t>(i);
    const Phantom p = make_phantom(opt);
    const fs::path dir = ctx.store.case_dir(id);
    if (fs::exists(dir)) fs::remove_all(dir);
    fs::create_directories(dir);
    write_volume(p.t1w, dir / paths::t1w);
    write_volume(p.dce, dir / paths::dce);
    write_volume(p.truth_fused, dir / paths::reference);
    write_volume(p.truth_anatomy, dir / "reference/anatomy.nii");
    write_volume(p.truth_lesion, dir / "reference/lesion.nii");
    save_transform(p.dce_to_t1w, dir / "reference/dce_to_t1w.json");
    CaseManifest m;
    m.case_id = id;
    m.sequences = {{"t1w", paths::t1w}, {"dce", paths::dce}};
    m.masks = {{kReferenceMaskKey, paths::reference},
               {"reference_anatomy", "reference/anatomy.nii"},
               {"reference_lesion", "reference/lesion.nii"}};
    m.notes = fmt::format("synthetic phantom, seed {}", opt.seed);
    ctx.store.create_case(m);
    ctx.log.line(fmt::format("phantom {}: seed {}", id, opt.seed));
  }
  return ids;
}

Outcome preprocess_case(const StageContext& ctx, const std::string& id) {
  require_case(ctx, id);
  const fs::path out_t1w = case_file(ctx, id, paths::preprocessed_t1w);
  const fs::path out_dce = case_file(ctx, id, paths::preprocessed_dce);
  if (!ctx.force && fs::exists(out_t1w) && fs::exists(out_dce)) {
    ctx.log.line(fmt::format("preprocess {}: outputs exist, skipped", id));
    return Outcome::skipped;
  }
  const auto& pp = ctx.config.preprocess;
  for (const auto& [seq, out] : {std::pair{"t1w", out_t1w}, std::pair{"dce", out_dce}}) {
    const ImageVolume raw = read_nifti_image(ctx.store.sequence_path(id, seq));
    const NormalizeResult n = normalize_percentile(denoise_gaussian(raw, pp.sigma_mm), pp.p_low, pp.p_high);
    if (n.degenerate) ctx.log.line(fmt::format("preprocess {}: warning: {} is constant", id, seq));
    write_volume(n.volume, out);
  }
  advance_to(ctx.store, id, Stage::preprocessed);
  ctx.log.line(fmt::format("preprocess {}: done", id));
  return Outcome::ran;
}

Outcome register_case(const StageContext& ctx, const std::string& id) {
  require_case(ctx, id);
  const fs::path out = case_file(ctx, id, paths::transform);
  if (!ctx.force && fs::exists(out)) {
    ctx.log.line(fmt::format("register {}: transform exists, skipped", id));
    return Outcome::skipped;
  }
  const ImageVolume fixed = require_image(ctx, id, paths::preprocessed_t1w, "preprocess");
  const ImageVolume moving = require_image(ctx, id, paths::preprocessed_dce, "preprocess");
  const RegistrationResult r = register_rigid(fixed, moving, ctx.config.registration);
  json report = {{"final_metric", r.final_metric},
                 {"iterations_used", r.iterations_used},
                 {"converged", r.converged},
                 {"metric", ctx.config.registration.metric == Metric::mi ? "mi" : "ncc"}};
  const std::string text = transform_to_json(r.transform);
  write_file_atomic(out, std::vector<std::uint8_t>(text.begin(), text.end()));
  const std::string rep = report.dump(2) + "\n";
  write_file_atomic(case_file(ctx, id, paths::registration_report), std::vector<std::uint8_t>(rep.begin(), rep.end()));
  advance_to(ctx.store, id, Stage::registered);
  ctx.log.line(fmt::format("register {}: metric {:.6f}, converged {}", id, r.final_metric, r.converged));
  return Outcome::ran;
}

Outcome segment_case(const StageContext& ctx, const std::string& id, const SegmentRequest& request,
                     bool fill_with_baseline) {
  require_case(ctx, id);
  std::map<std::string, std::string> source;  // mask key -> backend name or "" for baseline
  for (const auto& name : request.backends) {
    const auto it = ctx.config.backends.find(name);
    if (it == ctx.config.backends.end()) {
      throw ValidationError(fmt::format("backend '{}' is not configured (add a [backend.{}] section)", name, name));
    }
    const std::string key = mask_key_for_sequence(it->second.sequence);
    if (source.count(key)) throw ValidationError(fmt::format("two backends produce the '{}' mask", key));
    source[key] = name;
  }
  if (fill_with_baseline) {
    source.try_emplace(mask_keys::anatomy, "");
    source.try_emplace(mask_keys::lesion, "");
  }
  bool all_exist = true;
  for (const auto& [key, _] : source) all_exist = all_exist && ctx.store.has_mask(id, key);
  if (!ctx.force && all_exist) {
    ctx.log.line(fmt::format("segment {}: masks exist, skipped", id));
    return Outcome::skipped;
  }
  for (const auto& [key, backend] : source) {
    if (!ctx.force && ctx.store.has_mask(id, key)) continue;
    const bool lesion = key == mask_keys::lesion;
    const ImageVolume input =
        require_image(ctx, id, lesion ? paths::preprocessed_dce : paths::preprocessed_t1w, "preprocess");
    if (!backend.empty()) {
      const BackendEntry& e = ctx.config.backends.at(backend);
      BackendRunOptions opt;
      opt.case_id = id;
      const LabelVolume mask = run_backend(e.descriptor, input, e.descriptor.expected_labels, opt);
      ctx.store.store_mask(id, key, mask, Actor::pipeline, fmt::format("segment_backend:{}", backend));
      ctx.log.line(fmt::format("segment {}: {} from backend {}", id, key, backend));
    } else if (lesion) {
      const Index3 seed = request.lesion_seed ? *request.lesion_seed : find_lesion_seed(input);
      const LabelVolume mask = segment_baseline_lesion(input, seed, ctx.config.segmentation.lesion_delta);
      ctx.store.store_mask(id, key, mask, Actor::pipeline, "segment_baseline");
      ctx.log.line(fmt::format("segment {}: lesion baseline, seed ({}, {}, {}), {} voxels", id, seed[0], seed[1],
                               seed[2], count_label(mask, labels::lesion)));
    } else {
      const LabelVolume mask = segment_baseline_breast(input);
      ctx.store.store_mask(id, key, mask, Actor::pipeline, "segment_baseline");
      ctx.log.line(fmt::format("segment {}: anatomy baseline", id));
    }
  }
  advance_to(ctx.store, id, Stage::auto_segmented);
  return Outcome::ran;
}

Outcome complete_slices_case(const StageContext& ctx, const std::string& id, const fs::path& annotations) {
  require_case(ctx, id);
  if (!ctx.force && ctx.store.has_mask(id, mask_keys::lesion)) {
    ctx.log.line(fmt::format("complete-slices {}: lesion mask exists, skipped (use --force)", id));
    return Outcome::skipped;
  }
  const LabelVolume sparse = read_nifti_labels(annotations);
  const ImageVolume dce = read_nifti_image(ctx.store.sequence_path(id, "dce"));
  if (!same_grid(sparse.meta(), dce.meta())) {
    throw ValidationError(fmt::format("case '{}': annotations are not on the DCE grid", id));
  }
  const auto slices = annotations_from_volume(sparse, labels::lesion);
  const LabelVolume mask = complete_from_slices(slices, dce.meta(), ctx.config.segmentation.slice_profile);
  ctx.store.store_mask(id, mask_keys::lesion, mask, Actor::human, "complete_slices");
  ctx.log.line(fmt::format("complete-slices {}: {} annotated slices, {} lesion voxels", id, slices.size(),
                           count_label(mask, labels::lesion)));
  return Outcome::ran;
}

Outcome fuse_case(const StageContext& ctx, const std::string& id) {
  require_case(ctx, id);
  if (!ctx.force && ctx.store.has_mask(id, mask_keys::fused)) {
    ctx.log.line(fmt::format("fuse {}: fused mask exists, skipped", id));
    return Outcome::skipped;
  }
  const fs::path xf = case_file(ctx, id, paths::transform);
  if (!fs::exists(xf)) throw StateError(fmt::format("case '{}': missing {} (run `register` first)", id, paths::transform));
  const FusionResult r =
      fuse_labels(ctx.store.load_mask(id, mask_keys::anatomy), ctx.store.load_mask(id, mask_keys::lesion),
                  load_transform(xf));
  ctx.store.store_mask(id, mask_keys::fused, r.fused, Actor::pipeline, "fuse");
  ctx.log.line(fmt::format("fuse {}: lesion {} voxels, {} outside breast (containment {:.4f})", id, r.lesion_voxels,
                           r.lesion_outside_breast, r.containment()));
  if (r.lesion_outside_breast > 0) {
    ctx.log.line(fmt::format("fuse {}: warning: {} lesion voxels lie outside the breast mask", id,
                             r.lesion_outside_breast));
  }
  return Outcome::ran;
}

Outcome mesh_case(const StageContext& ctx, const std::string& id) {
  require_case(ctx, id);
  const fs::path dir = case_file(ctx, id, paths::mesh_dir);
  if (!ctx.force && fs::is_directory(dir) && !fs::is_empty(dir)) {
    ctx.log.line(fmt::format("mesh {}: meshes exist, skipped", id));
    return Outcome::skipped;
  }
  const LabelVolume fused = ctx.store.load_mask(id, mask_keys::fused);
  std::vector<TriangleMesh> meshes;
  for (const auto& s : default_structures()) {
    const Label mesh_label = *s.labels.begin();
    TriangleMesh m = marching_cubes(fused, std::vector<Label>(s.labels.begin(), s.labels.end()), mesh_label);
    if (m.triangles.empty()) {
      ctx.log.line(fmt::format("mesh {}: {} is empty, no surface", id, s.name));
      continue;
    }
    m = smooth_taubin(m, ctx.config.mesh.taubin);
    if (const auto it = ctx.config.palette.find(mesh_label); it != ctx.config.palette.end()) {
      m.color = it->second.diffuse;
    }
    ctx.log.line(fmt::format("mesh {}: {} {} triangles, volume {:.1f} mm^3", id, s.name, m.triangles.size(),
                             signed_volume(m)));
    meshes.push_back(std::move(m));
  }
  if (meshes.empty()) throw ProcessingError(fmt::format("case '{}': fused mask has no structures to mesh", id));
  if (fs::exists(dir)) fs::remove_all(dir);
  const auto fmt_ = ctx.config.mesh.format;
  if (fmt_ != MeshFormat::obj) export_scene(meshes, dir, SceneFormat::stl_per_label, ctx.config.palette);
  if (fmt_ != MeshFormat::stl) export_scene(meshes, dir, SceneFormat::obj_mtl, ctx.config.palette);
  return Outcome::ran;
}

Outcome export_revision_case(const StageContext& ctx, const std::string& id, const std::string& mask_key,
                             const fs::path& out_dir) {
  require_case(ctx, id);
  const fs::path img = out_dir / fmt::format("{}_img.nii", id);
  const fs::path mask = out_dir / fmt::format("{}_mask.nii", id);
  if (!ctx.force && (fs::exists(img) || fs::exists(mask))) {
    ctx.log.line(fmt::format("export-revision {}: files exist in {}, skipped", id, out_dir.string()));
    return Outcome::skipped;
  }
  export_for_revision(ctx.store, id, out_dir, mask_key);
  ctx.log.line(fmt::format("export-revision {}: wrote {} and {}", id, img.string(), mask.string()));
  return Outcome::ran;
}

Outcome ingest_revision_case(const StageContext& ctx, const std::string& id, const std::string& mask_key,
                             const fs::path& revised) {
  require_case(ctx, id);
  // An unchanged mask still counts as reviewed the first time.
  if (ctx.store.stage(id) >= Stage::revised && ctx.store.has_mask(id, mask_key) &&
      mask_hash(read_nifti_labels(revised)) == mask_hash(ctx.store.load_mask(id, mask_key))) {
    ctx.log.line(fmt::format("ingest-revision {}: {} unchanged, skipped", id, mask_key));
    return Outcome::skipped;
  }
  ctx.store.set_archive_revisions(ctx.config.hitl.archive_revisions);
  const EditStats s = ingest_revision(ctx.store, id, revised, mask_key);
  json j = {{"case_id", id},
            {"mask", mask_key},
            {"voxels_added", s.voxels_added},
            {"voxels_removed", s.voxels_removed},
            {"dice_before_after", s.dice_before_after}};
  json per = json::object();
  for (const auto& [l, e] : s.per_label) per[std::string(labels::name(l))] = {{"added", e.added}, {"removed", e.removed}};
  j["per_label"] = per;
  ctx.log.line(j.dump());
  return Outcome::ran;
}

Outcome split_store(const StageContext& ctx, double fraction, std::uint64_t seed, bool reassign) {
  const fs::path file = ctx.store.root() / kSplitFileName;
  if (fs::exists(file)) {
    const SplitAssignment wanted = compute_split(ctx.store.case_ids(), fraction, seed);
    if (split_to_json(wanted) == read_text(file)) {
      ctx.log.line(fmt::format("split: unchanged ({} train / {} test)", wanted.train.size(), wanted.test.size()));
      return Outcome::skipped;
    }
  }
  const SplitAssignment s = split_dataset(ctx.store, fraction, seed, reassign || ctx.force);
  ctx.log.line(fmt::format("split: {} train / {} test, seed {}", s.train.size(), s.test.size(), s.seed));
  return Outcome::ran;
}

MetricReport evaluate_store(const StageContext& ctx, const std::string& prediction_key) {
  std::vector<EvaluationPair> pairs;
  for (const auto& id : ctx.store.case_ids()) {
    const CaseRecord r = ctx.store.load(id);
    const auto ref = r.manifest.masks.find(kReferenceMaskKey);
    if (ref == r.manifest.masks.end() || !ctx.store.has_mask(id, prediction_key)) continue;
    fs::path ref_path = ref->second;
    if (ref_path.is_relative()) ref_path = ctx.store.case_dir(id) / ref_path;
    pairs.push_back({id, ctx.store.load_mask(id, prediction_key), read_nifti_labels(ref_path)});
  }
  if (pairs.empty()) {
    throw StateError(fmt::format("no case has both a '{}' mask and a reference mask", prediction_key));
  }
  MetricReport report = evaluate_cohort(pairs, default_structures(), ctx.config.evaluation.tau_mm);
  const std::string csv = report.to_csv();
  const std::string txt = report.to_text();
  write_file_atomic(ctx.store.root() / paths::evaluation_csv, std::vector<std::uint8_t>(csv.begin(), csv.end()));
  write_file_atomic(ctx.store.root() / paths::evaluation_txt, std::vector<std::uint8_t>(txt.begin(), txt.end()));
  ctx.log.line(txt);
  return report;
}

void run_pipeline(const StageContext& ctx, const std::vector<std::string>& case_ids, const SegmentRequest& segment,
                  int jobs) {
  if (jobs < 1) throw ValidationError("--jobs must be >= 1");
  if (case_ids.empty()) throw StateError("no cases to process");
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::exception_ptr> errors(case_ids.size());
  const auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= case_ids.size()) return;
      const std::string& id = case_ids[i];
      try {
        preprocess_case(ctx, id);
        register_case(ctx, id);
        segment_case(ctx, id, segment, true);
        fuse_case(ctx, id);
        mesh_case(ctx, id);
      } catch (...) {
        errors[i] = std::current_exception();
        failed.store(true);
      }
    }
  };
  const int n = std::min<int>(jobs, static_cast<int>(case_ids.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  bool any_reference = false;
  for (const auto& id : case_ids) any_reference = any_reference || ctx.store.load(id).manifest.masks.count(kReferenceMaskKey);
  if (any_reference) {
    const fs::path csv = ctx.store.root() / paths::evaluation_csv;
    if (!ctx.force && fs::exists(csv)) {
      ctx.log.line("evaluate: evaluation.csv exists, skipped");
    } else {
      evaluate_store(ctx);
    }
  }
}

}  // namespace mammoforge::cli
