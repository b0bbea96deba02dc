#include "lvace/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <numbers>
#include <sstream>

namespace lvace {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double raised_cosine(double distance) {
  if (std::abs(distance) >= 1.0) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * distance));
}

// Fractional log-bin position of a frequency.
double log_bin_position(double freq_hz) {
  return 1.0 + kBinsPerSemitone * (12.0 * std::log2(freq_hz / 440.0) + 69.0 - kLowestMidi);
}

const std::vector<double>& hamming_window() {
  static const std::vector<double> window = [] {
    std::vector<double> w(kFftSize);
    for (int n = 0; n < kFftSize; ++n) {
      w[static_cast<std::size_t>(n)] = 0.54 - 0.46 * std::cos(kTwoPi * n / (kFftSize - 1));
    }
    return w;
  }();
  return window;
}

class FftPlan {
 public:
  FftPlan() {
    std::lock_guard lock(planner_mutex());
    in_ = fftw_alloc_real(kFftSize);
    out_ = fftw_alloc_complex(kLinearBins);
    plan_ = fftw_plan_dft_r2c_1d(kFftSize, in_, out_, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  double* input() { return in_; }
  const fftw_complex* output() const { return out_; }
  void execute() { fftw_execute(plan_); }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

template <typename Sink>
void for_each_frame(const AudioBuffer& audio, Sink&& sink) {
  const int frames = frame_count(audio.samples.size());
  const auto& window = hamming_window();
  FftPlan plan;
  for (int m = 0; m < frames; ++m) {
    const std::size_t start = static_cast<std::size_t>(m) * kHopSize;
    for (int n = 0; n < kFftSize; ++n) {
      const std::size_t idx = start + static_cast<std::size_t>(n);
      const double s = idx < audio.samples.size() ? audio.samples[idx] : 0.0;
      plan.input()[n] = s * window[static_cast<std::size_t>(n)];
    }
    plan.execute();
    sink(m, plan.output());
  }
}

AudioBuffer at_analysis_rate(const AudioBuffer& audio) {
  if (audio.samples.empty()) throw Error(ErrorCode::kInvalidArgument, "empty audio buffer");
  return resample(audio, kAnalysisSampleRate);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double log_bin_frequency(double bin) {
  const double midi = kLowestMidi + (bin - 1.0) / kBinsPerSemitone;
  return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0);
}

int frame_count(std::size_t num_samples) {
  if (num_samples <= static_cast<std::size_t>(kFftSize)) return 1;
  return 1 + static_cast<int>((num_samples - kFftSize) / kHopSize);
}

Matrix stft_magnitude(const AudioBuffer& audio) {
  const AudioBuffer a = at_analysis_rate(audio);
  Matrix mag(frame_count(a.samples.size()), kLinearBins);
  for_each_frame(a, [&](int m, const fftw_complex* spectrum) {
    for (int j = 0; j < kLinearBins; ++j) mag(m, j) = std::hypot(spectrum[j][0], spectrum[j][1]);
  });
  return mag;
}

Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> stft(
    const AudioBuffer& audio) {
  const AudioBuffer a = at_analysis_rate(audio);
  Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(
      frame_count(a.samples.size()), kLinearBins);
  for_each_frame(a, [&](int m, const fftw_complex* spectrum) {
    for (int j = 0; j < kLinearBins; ++j) out(m, j) = {spectrum[j][0], spectrum[j][1]};
  });
  return out;
}

LogFrequencyMap::LogFrequencyMap() : weights_(Matrix::Zero(kLinearBins, kLogBins)) {
  const double bin_hz = kAnalysisSampleRate / kFftSize;
  for (int j = 1; j < kLinearBins; ++j) {
    const double pos = log_bin_position(j * bin_hz);
    const int lo = static_cast<int>(std::floor(pos));
    for (int k = std::max(0, lo); k <= std::min(kLogBins - 1, lo + 1); ++k) {
      weights_(j, k) = raised_cosine(pos - k);
    }
  }
  for (int k = 0; k < kLogBins; ++k) {
    const double total = weights_.col(k).sum();
    if (total > 0.0) weights_.col(k) /= total;
  }
}

LogSpectrogram LogFrequencyMap::apply(const Matrix& magnitudes) const {
  if (magnitudes.cols() != kLinearBins) {
    throw Error(ErrorCode::kShapeMismatch, "expected 2049 linear-frequency bins");
  }
  LogSpectrogram out;
  out.frames = magnitudes * weights_;
  return out;
}

LogSpectrogram map_to_log_frequency(const Matrix& magnitudes) {
  static const LogFrequencyMap map;
  return map.apply(magnitudes);
}

TuningEstimate estimate_tuning(const LogSpectrogram& spec) {
  TuningEstimate est;
  if (spec.frames.rows() == 0) throw Error(ErrorCode::kDegenerateInput, "empty spectrogram");
  const Eigen::RowVectorXd mean = spec.frames.colwise().mean();
  std::complex<double> acc = 0.0;
  for (Eigen::Index k = 0; k < mean.size(); ++k) {
    acc += mean(k) * std::polar(1.0, -kTwoPi * static_cast<double>(k) / kBinsPerSemitone);
  }
  if (mean.maxCoeff() <= 0.0 || std::abs(acc) == 0.0) {
    est.degenerate = true;
    return est;
  }
  const double phi = std::arg(acc);
  double wrapped = std::fmod(-phi - kTwoPi / 3.0 + std::numbers::pi, kTwoPi);
  if (wrapped < 0.0) wrapped += kTwoPi;
  wrapped -= std::numbers::pi;  // [-pi, pi)
  est.delta = wrapped / kTwoPi;
  est.tau = 440.0 * std::pow(2.0, est.delta / 12.0);
  return est;
}

Notegram retune(const LogSpectrogram& spec, const TuningEstimate& tuning) {
  double p = std::log(tuning.tau / 440.0) / std::log(2.0) * 36.0;
  if (std::abs(p - std::round(p)) < 1e-9) p = std::round(p);
  const int whole = static_cast<int>(std::floor(p));
  const double frac = p - whole;
  const Eigen::Index bins = spec.frames.cols();
  Notegram out;
  out.hop_seconds = spec.hop_seconds;
  out.frames = Matrix::Zero(spec.frames.rows(), bins);
  auto at = [&](Eigen::Index m, Eigen::Index k) {
    return (k >= 0 && k < bins) ? spec.frames(m, k) : 0.0;
  };
  for (Eigen::Index m = 0; m < spec.frames.rows(); ++m) {
    for (Eigen::Index k = 0; k < bins; ++k) {
      const Eigen::Index src = k + whole;
      out.frames(m, k) = frac == 0.0 ? at(m, src) : (1.0 - frac) * at(m, src) + frac * at(m, src + 1);
    }
  }
  return out;
}

Notegram standardize(const Notegram& notegram, int window_bins) {
  if (window_bins < 1) throw Error(ErrorCode::kInvalidParameter, "window must be >= 1 bin");
  const int half = window_bins / 2;
  const Eigen::Index bins = notegram.frames.cols();
  Notegram out;
  out.hop_seconds = notegram.hop_seconds;
  out.frames = Matrix::Zero(notegram.frames.rows(), bins);
  for (Eigen::Index m = 0; m < notegram.frames.rows(); ++m) {
    const auto row = notegram.frames.row(m);
    for (Eigen::Index k = 0; k < bins; ++k) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, k - half);
      const Eigen::Index hi = std::min<Eigen::Index>(bins - 1, k + half);
      const auto window = row.segment(lo, hi - lo + 1);
      const double mu = window.mean();
      const double var = (window.array() - mu).square().mean();
      const double sigma = std::sqrt(var);
      const double y = row(k);
      // A flat window can leave rounding noise in sigma; treat it as zero.
      const bool flat = !(sigma > 1e-12 * std::abs(mu));
      out.frames(m, k) = (y > mu && !flat) ? (y - mu) / sigma : 0.0;
    }
  }
  return out;
}

Matrix build_nnls_dictionary(double overtone_decay, int max_partials) {
  if (!(overtone_decay > 0.0 && overtone_decay < 1.0)) {
    throw Error(ErrorCode::kInvalidParameter, "overtone decay s must lie in (0, 1)");
  }
  if (max_partials < 1) throw Error(ErrorCode::kInvalidParameter, "max_partials must be >= 1");
  Matrix dict = Matrix::Zero(kLogBins, kNumNotes);
  for (int note = 0; note < kNumNotes; ++note) {
    const double f0 = 440.0 * std::pow(2.0, (kLowestMidi + note - 69.0) / 12.0);
    for (int h = 1; h <= max_partials; ++h) {
      const double pos = log_bin_position(f0 * h);
      const double amp = std::pow(overtone_decay, h - 1);
      const int lo = static_cast<int>(std::floor(pos));
      for (int k = std::max(0, lo); k <= std::min(kLogBins - 1, lo + 1); ++k) {
        dict(k, note) += amp * raised_cosine(pos - k);
      }
    }
  }
  return dict;
}

NnlsSolver::NnlsSolver(Matrix dictionary)
    : dictionary_(std::move(dictionary)),
      gram_(dictionary_.transpose() * dictionary_),
      max_iterations_(3 * static_cast<int>(dictionary_.cols())) {}

NnlsResult NnlsSolver::solve(const Vector& y) const {
  const Eigen::Index n = dictionary_.cols();
  if (y.size() != dictionary_.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "NNLS target length does not match dictionary rows");
  }
  NnlsResult result;
  result.x = Vector::Zero(n);
  const Vector b = dictionary_.transpose() * y;
  const double tol = 1e-8 * b.cwiseAbs().maxCoeff();
  if (!(tol > 0.0)) return result;

  Vector& x = result.x;
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  std::vector<bool> rejected(static_cast<std::size_t>(n), false);
  Vector w = b;

  // Solves the unconstrained problem restricted to the passive set; z is full
  // length with zeros outside it.
  auto solve_passive = [&](Vector& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
    }
    const auto p = static_cast<Eigen::Index>(idx.size());
    Matrix g(p, p);
    Vector rhs(p);
    for (Eigen::Index r = 0; r < p; ++r) {
      rhs(r) = b(idx[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < p; ++c) {
        g(r, c) = gram_(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]);
      }
    }
    const Vector s = g.ldlt().solve(rhs);
    z.setZero(n);
    for (Eigen::Index r = 0; r < p; ++r) z(idx[static_cast<std::size_t>(r)]) = s(r);
  };

  Vector z;
  while (true) {
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (!passive[u] && !rejected[u] && w(i) > tol && (best < 0 || w(i) > w(best))) best = i;
    }
    if (best < 0) break;
    if (result.iterations >= max_iterations_) {
      result.hit_iteration_cap = true;
      break;
    }
    passive[static_cast<std::size_t>(best)] = true;

    bool first = true;
    while (true) {
      ++result.iterations;
      solve_passive(z);
      if (first && z(best) <= 0.0) {
        // Numerically unusable direction: drop it until x changes.
        passive[static_cast<std::size_t>(best)] = false;
        rejected[static_cast<std::size_t>(best)] = true;
        z = x;
        break;
      }
      first = false;
      bool feasible = true;
      double alpha = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[static_cast<std::size_t>(i)] && z(i) <= 0.0) {
          feasible = false;
          alpha = std::min(alpha, x(i) / (x(i) - z(i)));
        }
      }
      if (feasible) break;
      x += alpha * (z - x);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[static_cast<std::size_t>(i)] && x(i) <= 1e-15 * (1.0 + x.cwiseAbs().maxCoeff())) {
          passive[static_cast<std::size_t>(i)] = false;
          x(i) = 0.0;
        }
      }
      if (result.iterations >= max_iterations_) {
        result.hit_iteration_cap = true;
        z = x;
        break;
      }
    }
    if (z != x) std::fill(rejected.begin(), rejected.end(), false);
    x = z;
    w = b - gram_ * x;
    if (result.hit_iteration_cap) break;
  }
  return result;
}

NnlsResult nnls_solve(const Matrix& dictionary, const Vector& y) {
  return NnlsSolver(dictionary).solve(y);
}

NnlsNotegram nnls_transcribe(const Notegram& notegram, const NnlsSolver& solver) {
  NnlsNotegram out;
  out.hop_seconds = notegram.hop_seconds;
  out.frames = Matrix::Zero(notegram.frames.rows(), solver.dictionary().cols());
  for (Eigen::Index m = 0; m < notegram.frames.rows(); ++m) {
    const Vector y = notegram.frames.row(m).transpose();
    if (y.cwiseAbs().maxCoeff() < 1e-6) continue;
    const NnlsResult r = solver.solve(y);
    if (r.hit_iteration_cap) ++out.max_iteration_frames;
    out.frames.row(m) = r.x.transpose();
  }
  return out;
}

namespace {

Vector rayleigh_profile(double scale) {
  Vector w(kNumNotes);
  for (int i = 0; i < kNumNotes; ++i) {
    const double l = i + 1.0;  // MIDI 21 -> 1
    w(i) = l / (scale * scale) * std::exp(-l * l / (2.0 * scale * scale));
  }
  return w / w.maxCoeff();
}

}  // namespace

Vector bass_profile() { return rayleigh_profile(16.8); }
Vector treble_profile() { return rayleigh_profile(42.0); }

Chromagram profile_to_chroma(const NnlsNotegram& nnls) {
  if (nnls.frames.cols() != kNumNotes) {
    throw Error(ErrorCode::kShapeMismatch, "expected 84 note activations per frame");
  }
  static const Vector bass = bass_profile();
  static const Vector treble = treble_profile();
  Chromagram out;
  out.hop_seconds = nnls.hop_seconds;
  out.frames = Matrix::Zero(nnls.frames.rows(), kChromaDims);
  for (Eigen::Index m = 0; m < nnls.frames.rows(); ++m) {
    for (int i = 0; i < kNumNotes; ++i) {
      const int pc = (kLowestMidi + i) % 12;
      const double x = nnls.frames(m, i);
      out.frames(m, kBassChromaOffset + pc) += bass(i) * x;
      out.frames(m, kTrebleChromaOffset + pc) += treble(i) * x;
    }
    for (int offset : {kBassChromaOffset, kTrebleChromaOffset}) {
      auto half = out.frames.row(m).segment(offset, 12);
      const double peak = half.maxCoeff();
      if (peak > 0.0) half /= peak;
    }
  }
  return out;
}

Matrix pitch_shift_chroma_frames(const Matrix& frames, int semitones) {
  if (frames.cols() % 12 != 0) throw Error(ErrorCode::kShapeMismatch, "chroma width not a multiple of 12");
  Matrix out(frames.rows(), frames.cols());
  const int k = ((semitones % 12) + 12) % 12;
  for (Eigen::Index block = 0; block < frames.cols(); block += 12) {
    for (int c = 0; c < 12; ++c) out.col(block + (c + k) % 12) = frames.col(block + c);
  }
  return out;
}

Matrix pitch_shift_notegram_frames(const Matrix& frames, int semitones) {
  const Eigen::Index shift = static_cast<Eigen::Index>(semitones) * kBinsPerSemitone;
  const Eigen::Index bins = frames.cols();
  Matrix out = Matrix::Zero(frames.rows(), bins);
  for (Eigen::Index k = 0; k < bins; ++k) {
    const Eigen::Index src = k - shift;
    if (src >= 0 && src < bins) out.col(k) = frames.col(src);
  }
  return out;
}

Chromagram pitch_shift(const Chromagram& chroma, int semitones) {
  return {pitch_shift_chroma_frames(chroma.frames, semitones), chroma.hop_seconds};
}

Notegram pitch_shift(const Notegram& notegram, int semitones) {
  return {pitch_shift_notegram_frames(notegram.frames, semitones), notegram.hop_seconds};
}

TrackFeatures extract_features(const AudioBuffer& audio, const FeatureConfig& config) {
  static std::mutex cache_mutex;
  static std::optional<std::pair<std::pair<double, int>, std::shared_ptr<const NnlsSolver>>> cache;
  std::shared_ptr<const NnlsSolver> solver;
  {
    std::lock_guard lock(cache_mutex);
    const auto key = std::make_pair(config.overtone_decay, config.max_partials);
    if (!cache || cache->first != key) {
      cache.emplace(key, std::make_shared<const NnlsSolver>(
                             build_nnls_dictionary(config.overtone_decay, config.max_partials)));
    }
    solver = cache->second;
  }

  TrackFeatures out;
  const AudioBuffer analysis =
      audio.sample_rate == kAnalysisSampleRate ? audio : resample(audio, kAnalysisSampleRate);
  const LogSpectrogram spec = map_to_log_frequency(stft_magnitude(analysis));
  out.tuning = estimate_tuning(spec);
  out.notegram = standardize(retune(spec, out.tuning), config.std_window_bins);
  out.chroma = profile_to_chroma(nnls_transcribe(out.notegram, *solver));
  return out;
}

void write_feature_file(const std::filesystem::path& path, FeatureKind kind, const Matrix& frames,
                        double hop_seconds) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << (kind == FeatureKind::kChroma ? "CHROMA" : "NOTEGRAM") << " 1 " << frames.rows() << ' '
      << frames.cols() << ' ' << format_double(hop_seconds) << '\n';
  for (Eigen::Index m = 0; m < frames.rows(); ++m) {
    for (Eigen::Index d = 0; d < frames.cols(); ++d) {
      if (d) out << ' ';
      out << format_double(frames(m, d));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string word;
  int version = 0;
  Eigen::Index rows = 0, cols = 0;
  double hop = 0.0;
  if (!(in >> word >> version >> rows >> cols >> hop) || version != 1 || rows < 0 || cols <= 0 ||
      (word != "CHROMA" && word != "NOTEGRAM")) {
    throw Error(ErrorCode::kParse, path.string() + ": bad feature file header");
  }
  FeatureFile f{word == "CHROMA" ? FeatureKind::kChroma : FeatureKind::kNotegram,
                Matrix(rows, cols), hop};
  for (Eigen::Index m = 0; m < rows; ++m) {
    for (Eigen::Index d = 0; d < cols; ++d) {
      if (!(in >> f.frames(m, d))) {
        throw Error(ErrorCode::kParse, path.string() + ": truncated at frame " + std::to_string(m));
      }
    }
  }
  return f;
}

}  // namespace lvace
