#pragma once

// Handcrafted front end: STFT -> 252-bin log spectrogram -> tuning
// correction -> standardization (notegram) -> NNLS note activations ->
// 24-dim bass/treble chromagram.

#include "lvace/audio.hpp"
#include "lvace/common.hpp"

#include <complex>
#include <filesystem>
#include <string>

namespace lvace {

constexpr int kFftSize = 4096;
constexpr int kHopSize = 512;
constexpr int kLinearBins = kFftSize / 2 + 1;  // 2049
constexpr int kLogBins = 252;
constexpr int kBinsPerSemitone = 3;
constexpr int kNumNotes = 84;
constexpr int kLowestMidi = 21;
constexpr int kChromaDims = 24;
// Chromagram layout: [0, 12) bass pitch classes, [12, 24) treble.
constexpr int kBassChromaOffset = 0;
constexpr int kTrebleChromaOffset = 12;
constexpr double kHopSeconds = kHopSize / kAnalysisSampleRate;
// Time of the boundary between frames m-1 and m is m * hop + this offset:
// the midpoint between the two window centres.
constexpr double kFrameBoundaryOffsetSeconds = (kFftSize / 2 - kHopSize / 2) / kAnalysisSampleRate;

struct FeatureConfig {
  double overtone_decay = 0.7;  // s
  int max_partials = 20;
  int std_window_bins = 19;
};

// M x K real matrices indexed [frame, bin].
struct LogSpectrogram {
  Matrix frames;
  double hop_seconds = kHopSeconds;
};

struct TuningEstimate {
  double delta = 0.0;  // semitones in [-0.5, 0.5)
  double tau = 440.0;  // Hz
  bool degenerate = false;
};

struct Notegram {
  Matrix frames;  // M x 252
  double hop_seconds = kHopSeconds;
};

struct NnlsNotegram {
  Matrix frames;  // M x 84
  double hop_seconds = kHopSeconds;
  int max_iteration_frames = 0;  // frames whose solve hit the iteration cap
};

struct Chromagram {
  Matrix frames;  // M x 24
  double hop_seconds = kHopSeconds;
};

// Centre frequency of log bin k; bin 1 (mod 3) is the in-tune centre of MIDI
// 21 + k / 3.
double log_bin_frequency(double bin);
int frame_count(std::size_t num_samples);

// Magnitude STFT (M x 2049). Inputs shorter than one window are zero padded.
Matrix stft_magnitude(const AudioBuffer& audio);
// Complex STFT, same framing.
Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> stft(
    const AudioBuffer& audio);

// Sparse raised-cosine mapping from 2049 linear bins to 252 log bins.
class LogFrequencyMap {
 public:
  LogFrequencyMap();
  LogSpectrogram apply(const Matrix& magnitudes) const;
  const Matrix& weights() const { return weights_; }  // 2049 x 252

 private:
  Matrix weights_;
};

LogSpectrogram map_to_log_frequency(const Matrix& magnitudes);

TuningEstimate estimate_tuning(const LogSpectrogram& spec);
Notegram retune(const LogSpectrogram& spec, const TuningEstimate& tuning);
Notegram standardize(const Notegram& notegram, int window_bins = 19);

// 252 x 84 harmonic-series dictionary.
Matrix build_nnls_dictionary(double overtone_decay = 0.7, int max_partials = 20);

struct NnlsResult {
  Vector x;
  int iterations = 0;
  bool hit_iteration_cap = false;
};

// Lawson-Hanson active-set NNLS, min ||E x - y|| s.t. x >= 0. The solver caches
// the Gram matrix so it can be reused across frames.
class NnlsSolver {
 public:
  explicit NnlsSolver(Matrix dictionary);
  NnlsResult solve(const Vector& y) const;
  const Matrix& dictionary() const { return dictionary_; }
  int max_iterations() const { return max_iterations_; }

 private:
  Matrix dictionary_;
  Matrix gram_;
  int max_iterations_;
};

NnlsResult nnls_solve(const Matrix& dictionary, const Vector& y);

NnlsNotegram nnls_transcribe(const Notegram& notegram, const NnlsSolver& solver);

// Normalized Rayleigh weights over the 84 notes.
Vector bass_profile();
Vector treble_profile();
Chromagram profile_to_chroma(const NnlsNotegram& nnls);

Chromagram pitch_shift(const Chromagram& chroma, int semitones);
Notegram pitch_shift(const Notegram& notegram, int semitones);
// Applied to one tiled/flattened frame block.
Matrix pitch_shift_chroma_frames(const Matrix& frames, int semitones);
Matrix pitch_shift_notegram_frames(const Matrix& frames, int semitones);

struct TrackFeatures {
  Notegram notegram;
  Chromagram chroma;
  TuningEstimate tuning;
};

TrackFeatures extract_features(const AudioBuffer& audio, const FeatureConfig& config = {});

enum class FeatureKind { kChroma, kNotegram };

// Feature file: header `CHROMA 1 <M> <dims> <hop>` or `NOTEGRAM 1 ...`, then
// M lines of space-separated values.
void write_feature_file(const std::filesystem::path& path, FeatureKind kind, const Matrix& frames,
                        double hop_seconds);
struct FeatureFile {
  FeatureKind kind;
  Matrix frames;
  double hop_seconds;
};
FeatureFile read_feature_file(const std::filesystem::path& path);

}  // namespace lvace
