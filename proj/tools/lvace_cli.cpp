// Command-line front end. Links only the C API.

#include "lvace/lvace.h"

#include "CLI11.hpp"

#include <cstdio>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitItemFailures = 1;
constexpr int kExitInvocation = 2;

int report(lvace_status status, size_t failures = 0) {
  if (status != LVACE_OK) {
    std::fprintf(stderr, "error (%s): %s\n", lvace_status_name(status), lvace_last_error());
    switch (status) {
      case LVACE_ERR_PARSE:
      case LVACE_ERR_INVALID_ARGUMENT:
      case LVACE_ERR_INVALID_PARAMETER:
        return kExitInvocation;
      default:
        return kExitItemFailures;
    }
  }
  if (failures > 0) {
    std::fprintf(stderr, "%zu item(s) failed:\n%s", failures, lvace_last_error());
    return kExitItemFailures;
  }
  return kExitOk;
}

struct ConfigGuard {
  lvace_config* cfg = nullptr;
  ~ConfigGuard() { lvace_config_free(cfg); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Large-vocabulary chord estimation: features, segmentation, classifiers, metrics"};
  app.require_subcommand(1);

  std::string config_path;
  long long seed = -1;
  int jobs = 1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Config file of section.key = value lines")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed (overrides run.seed)")->check(CLI::NonNegativeNumber);
  app.add_option("--jobs", jobs, "Worker threads for per-track work")->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "Extra key=value config entries");

  std::string manifest, features_dir, out, folds_path, model_path, pred_dir, truth_dir, vocab = "SeventhsBass",
                                                                                          report_path;
  int fold = -1, k = 5, tracks = 40, chords = 8;
  double sample_rate = 11025.0;
  std::vector<std::string> inputs;

  auto* extract = app.add_subcommand("extract", "Extract notegram and chromagram files for a manifest");
  extract->add_option("--manifest", manifest)->required();
  extract->add_option("--out", out, "Feature directory")->required();

  auto* folds = app.add_subcommand("folds", "Assign manifest tracks to cross-validation folds");
  folds->add_option("--manifest", manifest)->required();
  folds->add_option("--out", out, "Fold file")->required();
  folds->add_option("--k", k, "Number of folds")->check(CLI::Range(2, 1000));

  auto* train = app.add_subcommand("train", "Train classifiers (one per fold, or one on everything)");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--features", features_dir)->required();
  train->add_option("--folds", folds_path, "Fold file; without it one model uses all tracks");
  train->add_option("--fold", fold, "Train only this fold (default: all folds)");
  train->add_option("--out", out, "Model directory")->required();

  auto* predict = app.add_subcommand("predict", "Segment and label tracks, writing .lab files");
  predict->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out, "Output directory for .lab files")->required();
  predict->add_option("--manifest", manifest, "Predict every manifest track from extracted features");
  predict->add_option("--features", features_dir, "Feature directory (with --manifest)");
  predict->add_option("--folds", folds_path, "Fold file (with --manifest and --fold)");
  predict->add_option("--fold", fold, "Only tracks of this fold");
  predict->add_option("inputs", inputs, ".wav or .chroma files");

  auto* evaluate = app.add_subcommand("evaluate", "Score predicted .lab files against ground truth");
  evaluate->add_option("--pred", pred_dir)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--truth", truth_dir)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--vocab", vocab, "MajMin, MajMinBass, Sevenths or SeventhsBass");
  evaluate->add_option("--report", report_path, "Write the line-format report here");

  auto* synth = app.add_subcommand("synth", "Render a synthetic corpus with exact .lab files");
  synth->add_option("--out", out)->required();
  synth->add_option("--tracks", tracks)->check(CLI::NonNegativeNumber);
  synth->add_option("--chords", chords)->check(CLI::PositiveNumber);
  synth->add_option("--sr", sample_rate)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvocation;
  }

  ConfigGuard guard;
  lvace_status st = config_path.empty() ? lvace_config_new(&guard.cfg)
                                        : lvace_config_load(config_path.c_str(), &guard.cfg);
  if (st != LVACE_OK) {
    std::fprintf(stderr, "config: %s\n", lvace_last_error());
    return kExitInvocation;
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "--set expects key=value, got '%s'\n", kv.c_str());
      return kExitInvocation;
    }
    if (lvace_config_set(guard.cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) != LVACE_OK) {
      std::fprintf(stderr, "config: %s\n", lvace_last_error());
      return kExitInvocation;
    }
  }
  if (seed >= 0) lvace_config_set_seed(guard.cfg, static_cast<uint64_t>(seed));
  lvace_config_set_jobs(guard.cfg, jobs);
  lvace_config* cfg = guard.cfg;

  if (*extract) {
    size_t written = 0, skipped = 0, failures = 0;
    st = lvace_run_extract(cfg, manifest.c_str(), out.c_str(), &written, &skipped, &failures);
    if (st == LVACE_OK) std::printf("extracted %zu, up to date %zu, failed %zu\n", written, skipped, failures);
    return report(st, failures);
  }
  if (*folds) return report(lvace_run_folds(cfg, manifest.c_str(), k, out.c_str()));
  if (*train) {
    return report(lvace_run_train(cfg, manifest.c_str(), features_dir.c_str(),
                                  folds_path.empty() ? nullptr : folds_path.c_str(), fold, out.c_str()));
  }
  if (*predict) {
    size_t failures = 0;
    if (!manifest.empty()) {
      if (features_dir.empty() || !inputs.empty()) {
        std::fprintf(stderr, "predict --manifest needs --features and no positional inputs\n");
        return kExitInvocation;
      }
      st = lvace_run_predict_manifest(cfg, model_path.c_str(), manifest.c_str(), features_dir.c_str(),
                                      folds_path.empty() ? nullptr : folds_path.c_str(), fold, out.c_str(),
                                      &failures);
    } else {
      if (inputs.empty()) {
        std::fprintf(stderr, "predict needs input files or --manifest\n");
        return kExitInvocation;
      }
      std::vector<const char*> ptrs;
      for (const auto& s : inputs) ptrs.push_back(s.c_str());
      st = lvace_run_predict(cfg, model_path.c_str(), ptrs.data(), ptrs.size(), out.c_str(), &failures);
    }
    return report(st, failures);
  }
  if (*evaluate) {
    size_t failures = 0;
    st = lvace_run_evaluate(cfg, pred_dir.c_str(), truth_dir.c_str(), vocab.c_str(),
                            report_path.empty() ? nullptr : report_path.c_str(), &failures);
    return report(st, failures);
  }
  if (*synth) return report(lvace_run_synth(cfg, out.c_str(), tracks, chords, sample_rate));
  return kExitInvocation;
}
