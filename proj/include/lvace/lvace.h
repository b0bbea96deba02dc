#ifndef LVACE_H
#define LVACE_H

/* C interface to the chord estimation library. Every call returns an
 * lvace_status; on failure lvace_last_error() describes what went wrong
 * (per thread, valid until the next call on that thread). Objects are opaque
 * and owned by the caller once created. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LVACE_API __declspec(dllexport)
#else
#define LVACE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lvace_status {
  LVACE_OK = 0,
  LVACE_ERR_MALFORMED_LABEL = 1,
  LVACE_ERR_OUT_OF_VOCABULARY = 2,
  LVACE_ERR_IO = 3,
  LVACE_ERR_UNSUPPORTED_FORMAT = 4,
  LVACE_ERR_INVALID_PARAMETER = 5,
  LVACE_ERR_DEGENERATE_INPUT = 6,
  LVACE_ERR_MAX_ITERATIONS = 7,
  LVACE_ERR_INVALID_ANNOTATION = 8,
  LVACE_ERR_SHAPE_MISMATCH = 9,
  LVACE_ERR_NON_FINITE_LOSS = 10,
  LVACE_ERR_PARSE = 11,
  LVACE_ERR_OVERLAP = 12,
  LVACE_ERR_EMPTY_TRUTH = 13,
  LVACE_ERR_COVERAGE_MISMATCH = 14,
  LVACE_ERR_MISSING_FEATURES = 15,
  LVACE_ERR_MISSING_TRACK = 16,
  LVACE_ERR_INVALID_ARGUMENT = 17,
  LVACE_ERR_INTERNAL = 99
} lvace_status;

typedef struct lvace_config lvace_config;
typedef struct lvace_features lvace_features;
typedef struct lvace_model lvace_model;

LVACE_API const char* lvace_version(void);
LVACE_API const char* lvace_status_name(lvace_status status);
LVACE_API const char* lvace_last_error(void);

/* Configuration: defaults, or a `section.key = value` file. */
LVACE_API lvace_status lvace_config_new(lvace_config** out);
LVACE_API lvace_status lvace_config_load(const char* path, lvace_config** out);
LVACE_API lvace_status lvace_config_set(lvace_config* config, const char* key, const char* value);
LVACE_API lvace_status lvace_config_set_seed(lvace_config* config, uint64_t seed);
LVACE_API lvace_status lvace_config_set_jobs(lvace_config* config, int jobs);
LVACE_API void lvace_config_free(lvace_config* config);

/* Chord labels <-> state indices 0..216 (216 is N). */
LVACE_API lvace_status lvace_label_to_state(const char* label, int lenient, int* state);
/* Writes a NUL-terminated label; *needed gets the buffer size required. */
LVACE_API lvace_status lvace_state_to_label(int state, char* buffer, size_t capacity, size_t* needed);

/* Features of one track. */
LVACE_API lvace_status lvace_features_from_wav(const lvace_config* config, const char* path,
                                               lvace_features** out);
LVACE_API lvace_status lvace_features_from_samples(const lvace_config* config, const double* samples,
                                                   size_t count, double sample_rate,
                                                   lvace_features** out);
/* Reads an extracted .chroma file (and its .notegram sibling for ns models). */
LVACE_API lvace_status lvace_features_load(const lvace_config* config, const char* chroma_path,
                                           lvace_features** out);
LVACE_API lvace_status lvace_features_frames(const lvace_features* features, size_t* frames);
/* Copies frames x 24 chroma values, row-major. capacity is in doubles. */
LVACE_API lvace_status lvace_features_chroma(const lvace_features* features, double* out, size_t capacity);
LVACE_API void lvace_features_free(lvace_features* features);

LVACE_API lvace_status lvace_model_load(const char* path, lvace_model** out);
LVACE_API lvace_status lvace_model_save(const lvace_model* model, const char* path);
LVACE_API lvace_status lvace_model_input_shape(const lvace_model* model, int* n_frames, int* input_dim);
LVACE_API lvace_status lvace_model_predict_lab(const lvace_model* model, const lvace_config* config,
                                               const lvace_features* features, const char* lab_path);
LVACE_API void lvace_model_free(lvace_model* model);

/* Corpus workflows. Per-track failures are counted in *failures and listed,
 * one per line, in lvace_last_error(); the call itself still returns
 * LVACE_OK. */
LVACE_API lvace_status lvace_run_extract(const lvace_config* config, const char* manifest,
                                         const char* feature_dir, size_t* written, size_t* skipped,
                                         size_t* failures);
LVACE_API lvace_status lvace_run_folds(const lvace_config* config, const char* manifest, int k,
                                       const char* out_path);
/* folds_path NULL: one model on all tracks, written as model.*. Otherwise
 * fold < 0 trains every fold (fold<f>.*), fold >= 0 only that one. */
LVACE_API lvace_status lvace_run_train(const lvace_config* config, const char* manifest,
                                       const char* feature_dir, const char* folds_path, int fold,
                                       const char* out_dir);
LVACE_API lvace_status lvace_run_predict(const lvace_config* config, const char* model_path,
                                         const char* const* inputs, size_t count, const char* out_dir,
                                         size_t* failures);
/* Predicts from extracted features of the manifest tracks; with folds_path
 * and fold >= 0 only the tracks of that fold. */
LVACE_API lvace_status lvace_run_predict_manifest(const lvace_config* config, const char* model_path,
                                                  const char* manifest, const char* feature_dir,
                                                  const char* folds_path, int fold, const char* out_dir,
                                                  size_t* failures);
/* Table report to stdout; line report to report_path, or stdout when NULL.
 * Truth tracks without a prediction count as failures. */
LVACE_API lvace_status lvace_run_evaluate(const lvace_config* config, const char* pred_dir,
                                          const char* truth_dir, const char* vocabulary,
                                          const char* report_path, size_t* failures);
LVACE_API lvace_status lvace_evaluate_scores(const char* pred_dir, const char* truth_dir,
                                             const char* vocabulary, double* wcsr, double* acqa,
                                             double* seg_quality);
LVACE_API lvace_status lvace_run_synth(const lvace_config* config, const char* out_dir, int tracks,
                                       int chords_per_track, double sample_rate);

#ifdef __cplusplus
}
#endif

#endif
