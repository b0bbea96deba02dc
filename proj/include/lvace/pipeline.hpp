#pragma once

// Corpus-level workflows: manifests, fold plans, run configuration, feature
// extraction with caching, per-fold training, prediction to .lab files,
// evaluation of prediction directories, and a synthetic audio generator.

#include "lvace/audio.hpp"
#include "lvace/evaluation.hpp"
#include "lvace/features.hpp"
#include "lvace/neuralnets.hpp"
#include "lvace/segmentation.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lvace {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string id;
  fs::path audio;
  fs::path lab;
  char dataset = 'S';
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& id) const;
};

// Relative paths are resolved against the manifest's directory.
DatasetManifest read_manifest(const fs::path& path, bool check_files = true);
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

struct FoldPlan {
  int k = 5;
  std::map<std::string, int> assignment;
};

// Each dataset's tracks are dealt round-robin over the folds in manifest order,
// continuing where the previous dataset stopped.
FoldPlan make_folds(const DatasetManifest& manifest, int k = 5);
void write_folds(const fs::path& path, const FoldPlan& plan);
FoldPlan read_folds(const fs::path& path);

struct RunConfig {
  FeatureKind feature = FeatureKind::kChroma;
  FeatureConfig features;
  double self_weight = 99.99;
  ArchSpec arch{NetKind::kBlstm, 64, 2, kChromaDims, 6, kNumChordStates, false};
  TrainConfig train;
  bool augment = true;
  double validation_fraction = 0.15;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// Keys (all optional):
//   feature.kind = ch | ns          model.name = BLSTM-6seg-[64*2]-ch
//   feature.s (overtone decay)      model.kind = FCNN | DBN | BLSTM
//   feature.max_partials            model.width, model.depth, model.nseg
//   feature.std_window_bins         model.peepholes = true | false
//   hmm.self_weight                 train.* (see TrainConfig), train.augment,
//   run.seed                        train.validation_fraction
RunConfig parse_config_text(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const fs::path& path);
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
// Throws InvalidParameter when the model input does not fit the feature kind.
void validate(const RunConfig& config);
std::string config_fingerprint(const RunConfig& config);

// "FCNN-6seg-[800*2]-ns" style names.
void apply_model_name(RunConfig& config, std::string_view name);
std::string model_name(const RunConfig& config);

int feature_dims(FeatureKind kind);

struct ItemFailure {
  std::string id;
  std::string message;
};

// Runs fn(i) for i in [0, n) on at most `jobs` threads.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// --- extraction -----------------------------------------------------------

struct FeaturePaths {
  fs::path chroma, notegram, stamp;
};
FeaturePaths feature_paths(const fs::path& dir, const std::string& id);

struct ExtractReport {
  std::vector<std::string> written;
  std::vector<std::string> skipped;  // up to date
  std::vector<ItemFailure> failures;
};

ExtractReport extract_corpus(const DatasetManifest& manifest, const RunConfig& config,
                             const fs::path& feature_dir);

// Chromagram plus the network input representation for one track.
struct LoadedFeatures {
  Chromagram chroma;
  Matrix input;  // chroma or notegram frames
};
LoadedFeatures load_features(const fs::path& feature_dir, const std::string& id,
                             const RunConfig& config);

// --- training -------------------------------------------------------------

struct SampleSet {
  Dataset data;
  std::vector<std::string> track_ids;  // one per sample
  std::vector<int> shifts;             // semitone shift applied to each sample
};

// Ground-truth segmentation, tiling and (optionally) the 12 pitch shifts
// -6..+5 of every segment.
SampleSet build_samples(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                        const fs::path& feature_dir, const RunConfig& config, bool augment);

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
};

// fold < 0 trains on every track. Validation tracks are drawn from the
// training side with a seeded shuffle.
FoldSplit split_fold(const DatasetManifest& manifest, const FoldPlan* folds, int fold,
                     const RunConfig& config);

struct FoldTraining {
  int fold = -1;
  FoldSplit split;
  SampleSet train_samples;
  SampleSet valid_samples;
  TrainResult result;
};

FoldTraining train_fold(const DatasetManifest& manifest, const FoldPlan* folds, int fold,
                        const fs::path& feature_dir, const RunConfig& config);

// Writes <dir>/<stem>.model, .history and .samples (id tracing).
void write_fold_outputs(const fs::path& dir, const std::string& stem, const FoldTraining& run);

// --- prediction -----------------------------------------------------------

// Viterbi boundaries relabelled by the classifier. Times are frame boundary
// times from frame_to_seconds.
std::vector<TimedLabel> predict_labels(const NetworkModel& model, const LoadedFeatures& features,
                                       const RunConfig& config);
LoadedFeatures features_from_audio(const AudioBuffer& audio, const RunConfig& config);

struct PredictReport {
  std::vector<std::string> written;
  std::vector<ItemFailure> failures;
};

// Each input is a .wav file or a .chroma feature file (its .notegram sibling
// is used for notegram models). Output is <out_dir>/<stem>.lab.
PredictReport predict_files(const NetworkModel& model, const std::vector<fs::path>& inputs,
                            const fs::path& out_dir, const RunConfig& config);

// --- evaluation -----------------------------------------------------------

struct DirEvaluation {
  EvalReport report;
  std::vector<std::string> missing;  // truth ids without prediction
  std::vector<ItemFailure> failures;
};

// Pairs <truth_dir>/<id>.lab with <pred_dir>/<id>.lab.
DirEvaluation evaluate_dirs(const fs::path& pred_dir, const fs::path& truth_dir,
                            EvalVocabulary vocab);

// --- synthesis ------------------------------------------------------------

struct SynthChord {
  ChordLabel label;
  double duration = 1.0;
};

struct SynthTrack {
  AudioBuffer audio;
  std::vector<TimedLabel> lab;
};

SynthTrack synth_track(const std::vector<SynthChord>& chords, double sample_rate, std::uint64_t seed);

// Chords uniform over the 216 (root, quality) pairs, no immediate repeats,
// durations uniform in [min_duration, max_duration].
std::vector<SynthChord> random_chord_sequence(int count, Rng& rng, double min_duration = 2.0,
                                              double max_duration = 3.5);

struct SynthCorpusOptions {
  int tracks = 40;
  int chords_per_track = 8;
  double sample_rate = kAnalysisSampleRate;
  double min_duration = 2.0;
  double max_duration = 3.5;
  std::uint64_t seed = 0;
  std::string prefix = "synth";
};

// Writes <dir>/<id>.wav, <dir>/<id>.lab and <dir>/manifest.tsv.
DatasetManifest synth_corpus(const fs::path& dir, const SynthCorpusOptions& options);

}  // namespace lvace
