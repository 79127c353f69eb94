#include "mammoforge/cli/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mammoforge/cli/config.hpp"
#include "mammoforge/cli/stages.hpp"
#include "mammoforge/error.hpp"

namespace mammoforge::cli {
namespace fs = std::filesystem;

namespace {

void print_error(std::ostream& err, std::string_view kind, const std::string& message, int code) {
  const nlohmann::json j = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  err << j.dump() << '\n';
}

Index3 parse_index(const std::string& text) {
  Index3 idx{};
  std::istringstream in(text);
  std::string part;
  int n = 0;
  while (std::getline(in, part, ',')) {
    if (n == 3) throw ValidationError(fmt::format("'{}' is not an i,j,k voxel index", text));
    try {
      std::size_t used = 0;
      idx[n] = std::stoi(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("'{}' is not an i,j,k voxel index", text));
    }
    ++n;
  }
  if (n != 3) throw ValidationError(fmt::format("'{}' is not an i,j,k voxel index", text));
  return idx;
}

std::vector<std::string> select_cases(const CaseStore& store, const std::vector<std::string>& requested) {
  if (!requested.empty()) return requested;
  return store.case_ids();
}

const char* kDescription =
    "Breast MRI segmentation, human-in-the-loop dataset curation and 3D model export.\n"
    "Cases live under --root as one directory each.";

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{kDescription, "mammoforge"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.footer("Configuration (TOML subset, --config or $MAMMOFORGE_CONFIG); defaults:\n\n" + default_config_text());

  std::string root = ".";
  std::string config_path;
  bool force = false;
  app.add_option("--root", root, "Dataset root holding the case directories")->capture_default_str();
  app.add_option("--config", config_path, "Pipeline config file (falls back to $MAMMOFORGE_CONFIG)");
  app.add_flag("--force", force, "Overwrite existing stage outputs");

  std::vector<std::string> cases;
  const auto add_cases = [&](CLI::App* sub) {
    sub->add_option("--case", cases, "Case id (repeatable; default: every case)");
  };

  const std::vector<std::string> mask_names = {mask_keys::anatomy, mask_keys::lesion, mask_keys::fused};

  auto* ingest = app.add_subcommand("ingest", "Register a case from T1W and DCE volumes (NIfTI or DICOM directory)");
  IngestRequest ing;
  std::string ing_ref;
  ingest->add_option("--case", ing.case_id, "Case id")->required();
  ingest->add_option("--t1w", ing.t1w, "T1W volume")->required();
  ingest->add_option("--dce", ing.dce, "DCE volume")->required();
  ingest->add_option("--reference", ing_ref, "Reference label volume on the T1W grid");
  ingest->add_option("--notes", ing.notes, "Free-text notes");

  auto* phantom = app.add_subcommand("phantom", "Generate synthetic cases with reference masks");
  int phantom_cases = 3;
  std::uint64_t phantom_seed = 0;
  phantom->add_option("--cases", phantom_cases, "Number of cases")->capture_default_str();
  phantom->add_option("--seed", phantom_seed, "Seed of the first case")->capture_default_str();

  auto* preprocess = app.add_subcommand("preprocess", "Gaussian denoising and percentile normalisation");
  add_cases(preprocess);
  auto* reg = app.add_subcommand("register", "Rigid registration of DCE onto T1W");
  add_cases(reg);

  bool baseline = false;
  std::vector<std::string> backends;
  std::string lesion_seed;
  const auto add_segment_options = [&](CLI::App* sub) {
    auto* b = sub->add_flag("--baseline", baseline, "Classical baselines for both masks");
    auto* k = sub->add_option("--backend", backends, "Configured backend name (repeatable)");
    b->excludes(k);
    sub->add_option("--lesion-seed", lesion_seed, "Lesion region-growing seed as i,j,k (default: automatic)");
  };
  auto* segment = app.add_subcommand("segment", "Anatomy and lesion segmentation");
  add_segment_options(segment);
  add_cases(segment);

  auto* complete = app.add_subcommand("complete-slices", "Complete a lesion mask from sparsely annotated slices");
  std::string cs_case;
  fs::path cs_annotations;
  complete->add_option("--case", cs_case, "Case id")->required();
  complete->add_option("--annotations", cs_annotations, "Label volume on the DCE grid with annotated slices")
      ->required();

  auto* exp = app.add_subcommand("export-revision", "Export image and mask for manual revision");
  std::string rev_case;
  std::string rev_mask = mask_keys::anatomy;
  fs::path rev_out;
  exp->add_option("--case", rev_case, "Case id")->required();
  exp->add_option("--mask", rev_mask, "Mask to export")->check(CLI::IsMember(mask_names))->capture_default_str();
  exp->add_option("--out", rev_out, "Output directory")->required();

  auto* imp = app.add_subcommand("ingest-revision", "Replace a mask with a manually revised one");
  fs::path rev_file;
  imp->add_option("--case", rev_case, "Case id")->required();
  imp->add_option("--mask", rev_mask, "Mask to replace")->check(CLI::IsMember(mask_names))->capture_default_str();
  imp->add_option("--file", rev_file, "Revised label volume")->required();

  auto* split = app.add_subcommand("split", "Deterministic train/test split of revised cases");
  std::optional<double> split_fraction;
  std::optional<std::uint64_t> split_seed;
  bool reassign = false;
  split->add_option("--fraction", split_fraction, "Training fraction (default from config)");
  split->add_option("--seed", split_seed, "Shuffle seed (default from config)");
  split->add_flag("--reassign", reassign, "Allow replacing an existing split");

  auto* evaluate = app.add_subcommand("evaluate", "Dice and NSD against reference masks");
  std::string prediction = mask_keys::fused;
  evaluate->add_option("--prediction", prediction, "Mask to evaluate")
      ->check(CLI::IsMember(mask_names))
      ->capture_default_str();

  auto* fuse = app.add_subcommand("fuse", "Map the lesion mask into the anatomy frame");
  add_cases(fuse);
  auto* mesh = app.add_subcommand("mesh", "Surface meshes of the fused labels");
  add_cases(mesh);

  auto* pipeline = app.add_subcommand("pipeline", "preprocess, register, segment, fuse, mesh and evaluate");
  int jobs = 1;
  add_segment_options(pipeline);
  add_cases(pipeline);
  pipeline->add_option("--jobs", jobs, "Cases processed in parallel")->capture_default_str();

  std::vector<std::string> argv_storage;
  argv_storage.emplace_back("mammoforge");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what(), kExitUsage);
    return kExitUsage;
  }

  if ((segment->parsed() || pipeline->parsed()) && !baseline && backends.empty()) {
    print_error(err, "usage", "segmentation needs --baseline or --backend <name>", kExitUsage);
    return kExitUsage;
  }

  try {
    PipelineConfig config;
    if (config_path.empty()) {
      if (const char* env = std::getenv("MAMMOFORGE_CONFIG"); env != nullptr && *env != '\0') config_path = env;
    }
    if (!config_path.empty()) config = load_config(config_path);

    CaseStore store(root);
    store.set_archive_revisions(config.hitl.archive_revisions);
    Logger log(out);
    const StageContext ctx{store, config, log, force};

    SegmentRequest seg;
    seg.backends = backends;
    if (!lesion_seed.empty()) seg.lesion_seed = parse_index(lesion_seed);

    if (ingest->parsed()) {
      if (!ing_ref.empty()) ing.reference = fs::path(ing_ref);
      ingest_case(ctx, ing);
    } else if (phantom->parsed()) {
      fs::create_directories(root);
      generate_phantoms(ctx, phantom_cases, phantom_seed);
    } else if (preprocess->parsed()) {
      for (const auto& id : select_cases(store, cases)) preprocess_case(ctx, id);
    } else if (reg->parsed()) {
      for (const auto& id : select_cases(store, cases)) register_case(ctx, id);
    } else if (segment->parsed()) {
      for (const auto& id : select_cases(store, cases)) segment_case(ctx, id, seg, baseline);
    } else if (complete->parsed()) {
      complete_slices_case(ctx, cs_case, cs_annotations);
    } else if (exp->parsed()) {
      export_revision_case(ctx, rev_case, rev_mask, rev_out);
    } else if (imp->parsed()) {
      ingest_revision_case(ctx, rev_case, rev_mask, rev_file);
    } else if (split->parsed()) {
      split_store(ctx, split_fraction.value_or(config.split.fraction), split_seed.value_or(config.split.seed),
                  reassign);
    } else if (evaluate->parsed()) {
      evaluate_store(ctx, prediction);
    } else if (fuse->parsed()) {
      for (const auto& id : select_cases(store, cases)) fuse_case(ctx, id);
    } else if (mesh->parsed()) {
      for (const auto& id : select_cases(store, cases)) mesh_case(ctx, id);
    } else if (pipeline->parsed()) {
      run_pipeline(ctx, select_cases(store, cases), seg, jobs);
    }
  } catch (const Error& e) {
    const int code = e.is_validation() ? kExitValidation : kExitProcessing;
    print_error(err, to_string(e.kind()), e.what(), code);
    return code;
  } catch (const fs::filesystem_error& e) {
    print_error(err, "io", e.what(), kExitProcessing);
    return kExitProcessing;
  } catch (const std::exception& e) {
    print_error(err, "processing", e.what(), kExitProcessing);
    return kExitProcessing;
  }
  return kExitOk;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace mammoforge::cli
