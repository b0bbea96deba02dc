#include "lvace/lvace.h"

#include "lvace/pipeline.hpp"

#include <cstring>
#include <iostream>
#include <fstream>
#include <new>

struct lvace_config {
  lvace::RunConfig config;
};

struct lvace_features {
  lvace::LoadedFeatures features;
};

struct lvace_model {
  lvace::NetworkModel model;
};

namespace {

thread_local std::string g_last_error;

lvace_status fail(lvace_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
lvace_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const lvace::Error& e) {
    return fail(static_cast<lvace_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(LVACE_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LVACE_ERR_INTERNAL, e.what());
  }
}

#define LVACE_REQUIRE(cond, what) \
  if (!(cond)) return fail(LVACE_ERR_INVALID_ARGUMENT, what)

void list_failures(const std::vector<lvace::ItemFailure>& failures) {
  for (const auto& f : failures) g_last_error += f.id + ": " + f.message + "\n";
}

const lvace::RunConfig& config_or_default(const lvace_config* c) {
  static const lvace::RunConfig defaults;
  return c ? c->config : defaults;
}

}  // namespace

extern "C" {

const char* lvace_version(void) { return "1.0.0"; }

const char* lvace_status_name(lvace_status status) {
  if (status == LVACE_OK) return "Ok";
  if (status == LVACE_ERR_INTERNAL) return "Internal";
  return lvace::error_code_name(static_cast<lvace::ErrorCode>(status));
}

const char* lvace_last_error(void) { return g_last_error.c_str(); }

lvace_status lvace_config_new(lvace_config** out) {
  return guarded([&] {
    LVACE_REQUIRE(out, "out is null");
    *out = new lvace_config{};
    return LVACE_OK;
  });
}

lvace_status lvace_config_load(const char* path, lvace_config** out) {
  return guarded([&] {
    LVACE_REQUIRE(path && out, "null argument");
    *out = new lvace_config{lvace::load_config(path)};
    return LVACE_OK;
  });
}

lvace_status lvace_config_set(lvace_config* config, const char* key, const char* value) {
  return guarded([&] {
    LVACE_REQUIRE(config && key && value, "null argument");
    lvace::RunConfig next = config->config;
    lvace::set_config_value(next, key, value);
    lvace::validate(next);
    config->config = next;
    return LVACE_OK;
  });
}

lvace_status lvace_config_set_seed(lvace_config* config, uint64_t seed) {
  return guarded([&] {
    LVACE_REQUIRE(config, "config is null");
    config->config.seed = seed;
    return LVACE_OK;
  });
}

lvace_status lvace_config_set_jobs(lvace_config* config, int jobs) {
  return guarded([&] {
    LVACE_REQUIRE(config, "config is null");
    LVACE_REQUIRE(jobs >= 1, "jobs must be >= 1");
    config->config.jobs = jobs;
    return LVACE_OK;
  });
}

void lvace_config_free(lvace_config* config) { delete config; }

lvace_status lvace_label_to_state(const char* label, int lenient, int* state) {
  return guarded([&] {
    LVACE_REQUIRE(label && state, "null argument");
    *state = lvace::to_state_index(
        lvace::parse_label(label, lenient ? lvace::LabelParsing::kLenient : lvace::LabelParsing::kStrict));
    return LVACE_OK;
  });
}

lvace_status lvace_state_to_label(int state, char* buffer, size_t capacity, size_t* needed) {
  return guarded([&] {
    const std::string text = lvace::print_label(lvace::from_state_index(state));
    if (needed) *needed = text.size() + 1;
    if (!buffer) return LVACE_OK;
    LVACE_REQUIRE(capacity > text.size(), "buffer too small");
    std::memcpy(buffer, text.c_str(), text.size() + 1);
    return LVACE_OK;
  });
}

lvace_status lvace_features_from_wav(const lvace_config* config, const char* path, lvace_features** out) {
  return guarded([&] {
    LVACE_REQUIRE(path && out, "null argument");
    *out = new lvace_features{
        lvace::features_from_audio(lvace::load_and_resample(path), config_or_default(config))};
    return LVACE_OK;
  });
}

lvace_status lvace_features_from_samples(const lvace_config* config, const double* samples, size_t count,
                                         double sample_rate, lvace_features** out) {
  return guarded([&] {
    LVACE_REQUIRE(out && (samples || count == 0), "null argument");
    LVACE_REQUIRE(sample_rate > 0.0, "sample rate must be positive");
    lvace::AudioBuffer audio;
    audio.samples.assign(samples, samples + count);
    audio.sample_rate = sample_rate;
    *out = new lvace_features{lvace::features_from_audio(audio, config_or_default(config))};
    return LVACE_OK;
  });
}

lvace_status lvace_features_load(const lvace_config* config, const char* chroma_path, lvace_features** out) {
  return guarded([&] {
    LVACE_REQUIRE(chroma_path && out, "null argument");
    const auto& cfg = config_or_default(config);
    const lvace::fs::path path(chroma_path);
    const auto stem = path.stem().string();
    *out = new lvace_features{lvace::load_features(path.parent_path(), stem, cfg)};
    return LVACE_OK;
  });
}

lvace_status lvace_features_frames(const lvace_features* features, size_t* frames) {
  return guarded([&] {
    LVACE_REQUIRE(features && frames, "null argument");
    *frames = static_cast<size_t>(features->features.chroma.frames.rows());
    return LVACE_OK;
  });
}

lvace_status lvace_features_chroma(const lvace_features* features, double* out, size_t capacity) {
  return guarded([&] {
    LVACE_REQUIRE(features && out, "null argument");
    const auto& m = features->features.chroma.frames;
    LVACE_REQUIRE(capacity >= static_cast<size_t>(m.size()), "buffer too small");
    std::memcpy(out, m.data(), sizeof(double) * static_cast<size_t>(m.size()));
    return LVACE_OK;
  });
}

void lvace_features_free(lvace_features* features) { delete features; }

lvace_status lvace_model_load(const char* path, lvace_model** out) {
  return guarded([&] {
    LVACE_REQUIRE(path && out, "null argument");
    *out = new lvace_model{lvace::load_model(lvace::fs::path(path))};
    return LVACE_OK;
  });
}

lvace_status lvace_model_save(const lvace_model* model, const char* path) {
  return guarded([&] {
    LVACE_REQUIRE(model && path, "null argument");
    lvace::save_model(model->model, lvace::fs::path(path));
    return LVACE_OK;
  });
}

lvace_status lvace_model_input_shape(const lvace_model* model, int* n_frames, int* input_dim) {
  return guarded([&] {
    LVACE_REQUIRE(model, "model is null");
    if (n_frames) *n_frames = model->model.arch.n_frames;
    if (input_dim) *input_dim = model->model.arch.input_dim;
    return LVACE_OK;
  });
}

lvace_status lvace_model_predict_lab(const lvace_model* model, const lvace_config* config,
                                     const lvace_features* features, const char* lab_path) {
  return guarded([&] {
    LVACE_REQUIRE(model && features && lab_path, "null argument");
    lvace::write_lab(lab_path, lvace::predict_labels(model->model, features->features, config_or_default(config)));
    return LVACE_OK;
  });
}

void lvace_model_free(lvace_model* model) { delete model; }

lvace_status lvace_run_extract(const lvace_config* config, const char* manifest, const char* feature_dir,
                               size_t* written, size_t* skipped, size_t* failures) {
  return guarded([&] {
    LVACE_REQUIRE(manifest && feature_dir, "null argument");
    const auto report =
        lvace::extract_corpus(lvace::read_manifest(manifest, false), config_or_default(config), feature_dir);
    if (written) *written = report.written.size();
    if (skipped) *skipped = report.skipped.size();
    if (failures) *failures = report.failures.size();
    list_failures(report.failures);
    return LVACE_OK;
  });
}

lvace_status lvace_run_folds(const lvace_config* config, const char* manifest, int k, const char* out_path) {
  (void)config;
  return guarded([&] {
    LVACE_REQUIRE(manifest && out_path, "null argument");
    lvace::write_folds(out_path, lvace::make_folds(lvace::read_manifest(manifest, false), k));
    return LVACE_OK;
  });
}

lvace_status lvace_run_train(const lvace_config* config, const char* manifest, const char* feature_dir,
                             const char* folds_path, int fold, const char* out_dir) {
  return guarded([&] {
    LVACE_REQUIRE(manifest && feature_dir && out_dir, "null argument");
    const auto& cfg = config_or_default(config);
    lvace::validate(cfg);
    const auto m = lvace::read_manifest(manifest, false);
    if (!folds_path) {
      lvace::write_fold_outputs(out_dir, "model", lvace::train_fold(m, nullptr, -1, feature_dir, cfg));
      return LVACE_OK;
    }
    const auto plan = lvace::read_folds(folds_path);
    LVACE_REQUIRE(fold < plan.k, "fold index out of range");
    for (int f = fold < 0 ? 0 : fold; f < (fold < 0 ? plan.k : fold + 1); ++f) {
      lvace::write_fold_outputs(out_dir, "fold" + std::to_string(f), lvace::train_fold(m, &plan, f, feature_dir, cfg));
    }
    return LVACE_OK;
  });
}

lvace_status lvace_run_predict(const lvace_config* config, const char* model_path, const char* const* inputs,
                               size_t count, const char* out_dir, size_t* failures) {
  return guarded([&] {
    LVACE_REQUIRE(model_path && out_dir && (inputs || count == 0), "null argument");
    const auto model = lvace::load_model(lvace::fs::path(model_path));
    std::vector<lvace::fs::path> paths;
    for (size_t i = 0; i < count; ++i) {
      LVACE_REQUIRE(inputs[i], "null input path");
      paths.emplace_back(inputs[i]);
    }
    const auto report = lvace::predict_files(model, paths, out_dir, config_or_default(config));
    if (failures) *failures = report.failures.size();
    list_failures(report.failures);
    return LVACE_OK;
  });
}

lvace_status lvace_run_predict_manifest(const lvace_config* config, const char* model_path, const char* manifest,
                                        const char* feature_dir, const char* folds_path, int fold,
                                        const char* out_dir, size_t* failures) {
  return guarded([&] {
    LVACE_REQUIRE(model_path && manifest && feature_dir && out_dir, "null argument");
    const auto m = lvace::read_manifest(manifest, false);
    std::optional<lvace::FoldPlan> plan;
    if (folds_path && fold >= 0) plan = lvace::read_folds(folds_path);
    std::vector<lvace::fs::path> paths;
    for (const auto& e : m.entries) {
      if (plan) {
        const auto it = plan->assignment.find(e.id);
        if (it == plan->assignment.end() || it->second != fold) continue;
      }
      paths.push_back(lvace::feature_paths(feature_dir, e.id).chroma);
    }
    const auto model = lvace::load_model(lvace::fs::path(model_path));
    const auto report = lvace::predict_files(model, paths, out_dir, config_or_default(config));
    if (failures) *failures = report.failures.size();
    list_failures(report.failures);
    return LVACE_OK;
  });
}

lvace_status lvace_run_evaluate(const lvace_config* config, const char* pred_dir, const char* truth_dir,
                                const char* vocabulary, const char* report_path, size_t* failures) {
  (void)config;
  return guarded([&] {
    LVACE_REQUIRE(pred_dir && truth_dir, "null argument");
    const auto vocab = vocabulary ? lvace::parse_vocabulary(vocabulary) : lvace::EvalVocabulary::kSeventhsBass;
    const auto result = lvace::evaluate_dirs(pred_dir, truth_dir, vocab);
    for (const auto& id : result.missing) g_last_error += id + ": " + "no prediction (MissingTrack)\n";
    list_failures(result.failures);
    if (failures) *failures = result.missing.size() + result.failures.size();
    if (result.report.per_track.empty()) {
      if (result.missing.empty() && result.failures.empty()) {
        return fail(LVACE_ERR_EMPTY_TRUTH, "no truth tracks in " + std::string(truth_dir));
      }
      return LVACE_OK;
    }
    lvace::write_report_table(std::cout, result.report);
    if (report_path) {
      std::ofstream out(report_path);
      if (!out) return fail(LVACE_ERR_IO, std::string("cannot write ") + report_path);
      lvace::write_report_lines(out, result.report);
    } else {
      lvace::write_report_lines(std::cout, result.report);
    }
    std::cout.flush();
    return LVACE_OK;
  });
}

lvace_status lvace_evaluate_scores(const char* pred_dir, const char* truth_dir, const char* vocabulary,
                                   double* wcsr, double* acqa, double* seg_quality) {
  return guarded([&] {
    LVACE_REQUIRE(pred_dir && truth_dir, "null argument");
    const auto vocab = vocabulary ? lvace::parse_vocabulary(vocabulary) : lvace::EvalVocabulary::kSeventhsBass;
    const auto result = lvace::evaluate_dirs(pred_dir, truth_dir, vocab);
    if (!result.missing.empty()) return fail(LVACE_ERR_MISSING_TRACK, "missing prediction for " + result.missing.front());
    if (!result.failures.empty()) {
      list_failures(result.failures);
      return LVACE_ERR_PARSE;
    }
    if (wcsr) *wcsr = result.report.wcsr;
    if (acqa) *acqa = result.report.acqa;
    if (seg_quality) *seg_quality = result.report.seg_quality;
    return LVACE_OK;
  });
}

lvace_status lvace_run_synth(const lvace_config* config, const char* out_dir, int tracks, int chords_per_track,
                             double sample_rate) {
  return guarded([&] {
    LVACE_REQUIRE(out_dir, "null argument");
    LVACE_REQUIRE(tracks >= 0 && chords_per_track >= 1 && sample_rate > 0.0, "bad synth parameters");
    lvace::SynthCorpusOptions options;
    options.tracks = tracks;
    options.chords_per_track = chords_per_track;
    options.sample_rate = sample_rate;
    options.seed = config_or_default(config).seed;
    lvace::synth_corpus(out_dir, options);
    return LVACE_OK;
  });
}

}  // extern "C"
