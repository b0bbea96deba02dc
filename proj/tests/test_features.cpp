#include "doctest.h"

#include "lvace/features.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>

using namespace lvace;

namespace {

AudioBuffer tone_mix(const std::vector<double>& freqs, double seconds, int partials = 1, double rate = 11025.0) {
  AudioBuffer a;
  a.sample_rate = rate;
  a.samples.assign(static_cast<std::size_t>(seconds * rate), 0.0);
  for (double f : freqs) {
    for (int h = 1; h <= partials; ++h) {
      if (f * h >= rate / 2) continue;
      const double amp = 0.1 * std::pow(0.7, h - 1);
      for (std::size_t i = 0; i < a.samples.size(); ++i) {
        a.samples[i] += amp * std::sin(2.0 * std::numbers::pi * f * h * static_cast<double>(i) / rate);
      }
    }
  }
  return a;
}

double midi_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

Matrix random_nonneg(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform();
  }
  return m;
}

}  // namespace

TEST_CASE("frame count formula") {
  CHECK(frame_count(4096) == 1);
  CHECK(frame_count(4096 + 511) == 1);
  CHECK(frame_count(4096 + 512) == 2);
  CHECK(frame_count(110250) == 1 + (110250 - 4096) / 512);
  CHECK(frame_count(100) == 1);
  const Matrix mag = stft_magnitude(AudioBuffer{std::vector<double>(100, 0.1), 11025.0});
  CHECK(mag.rows() == 1);
  CHECK(mag.cols() == 2049);
}

TEST_CASE("STFT matches a direct DFT and peaks at a bin-centre sine") {
  const int j = 163;
  const double f = j * 11025.0 / 4096.0;
  const AudioBuffer a = tone_mix({f}, 0.6);
  const Matrix mag = stft_magnitude(a);
  REQUIRE(mag.rows() == frame_count(a.samples.size()));
  Eigen::Index arg = 0;
  mag.row(1).maxCoeff(&arg);
  CHECK(arg == j);
  const std::vector<double> frame(a.samples.begin() + 512, a.samples.begin() + 512 + 4096);
  for (int bin : {0, 5, j - 1, j, j + 1, 1000, 2048}) {
    const double want = oracle::dft_magnitude(frame, bin);
    CHECK(mag(1, bin) == doctest::Approx(want).epsilon(1e-9).scale(1.0));
  }
  const auto complex_spec = stft(a);
  CHECK(std::abs(complex_spec(1, j)) == doctest::Approx(mag(1, j)));
}

TEST_CASE("STFT of silence is zero") {
  const Matrix mag = stft_magnitude(AudioBuffer{std::vector<double>(9000, 0.0), 11025.0});
  CHECK(mag.isZero(0.0));
}

TEST_CASE("log-frequency mapping kernel support and partition of unity") {
  const LogFrequencyMap map;
  const Matrix& w = map.weights();
  CHECK(w.rows() == 2049);
  CHECK(w.cols() == 252);
  CHECK((w.array() >= 0.0).all());
  for (int j : {40, 300, 1100}) {
    Matrix spike = Matrix::Zero(1, 2049);
    spike(0, j) = 1.0;
    const LogSpectrogram out = map.apply(spike);
    int nonzero = 0;
    const double pos = 1.0 + 3.0 * (12.0 * std::log2(j * 11025.0 / 4096.0 / 440.0) + 48.0);
    for (int k = 0; k < 252; ++k) {
      if (out.frames(0, k) != 0.0) {
        ++nonzero;
        CHECK(std::abs(pos - k) < 1.0);
      }
    }
    CAPTURE(j);
    CAPTURE(pos);
    CHECK(nonzero >= 1);
    CHECK(nonzero <= 2);
  }
  const Matrix flat = Matrix::Constant(1, 2049, 3.5);
  const LogSpectrogram out = map.apply(flat);
  int covered = 0;
  for (int k = 0; k < 252; ++k) {
    if (w.col(k).sum() > 0.0) {
      ++covered;
      CHECK(out.frames(0, k) == doctest::Approx(3.5).epsilon(1e-12));
    }
  }
  CHECK(covered > 150);
  // Bins above the lowest octaves all receive linear-frequency support.
  for (int k = 120; k < 252; ++k) CHECK(w.col(k).sum() > 0.0);
}

TEST_CASE("A4 sine lands on the centre sub-bin of MIDI 69") {
  const Matrix mag = stft_magnitude(tone_mix({440.0}, 1.0));
  const LogSpectrogram spec = map_to_log_frequency(mag);
  Eigen::Index arg = 0;
  spec.frames.row(2).maxCoeff(&arg);
  CHECK(arg == 1 + 3 * (69 - 21));
  CHECK(log_bin_frequency(145.0) == doctest::Approx(440.0));
}

TEST_CASE("tuning estimate on impulse trains") {
  LogSpectrogram spec;
  spec.frames = Matrix::Zero(3, 252);
  for (int k = 1; k < 252; k += 3) spec.frames.col(k).setConstant(2.0);
  TuningEstimate t = estimate_tuning(spec);
  CHECK_FALSE(t.degenerate);
  CHECK(std::abs(t.delta) < 1e-12);
  CHECK(t.tau == doctest::Approx(440.0));
  // Energy one sub-bin sharp reads as +1/3 semitone.
  spec.frames.setZero();
  for (int k = 2; k < 252; k += 3) spec.frames.col(k).setConstant(2.0);
  t = estimate_tuning(spec);
  CHECK(t.delta == doctest::Approx(1.0 / 3.0));
  CHECK(t.tau == doctest::Approx(440.0 * std::pow(2.0, (1.0 / 3.0) / 12.0)));
  spec.frames.setZero();
  t = estimate_tuning(spec);
  CHECK(t.degenerate);
  CHECK(t.delta == 0.0);
  CHECK(t.tau == 440.0);
}

TEST_CASE("tuning recovery on detuned harmonic tones") {
  for (double delta : {-0.4, -0.25, 0.0, 0.25, 0.4}) {
    std::vector<double> freqs;
    for (int midi : {45, 52, 57, 61, 64, 69, 76}) freqs.push_back(midi_hz(midi + delta));
    const LogSpectrogram spec = map_to_log_frequency(stft_magnitude(tone_mix(freqs, 2.0, 4)));
    const TuningEstimate t = estimate_tuning(spec);
    CAPTURE(delta);
    CHECK(std::abs(t.delta - delta) < 0.05);
  }
}

TEST_CASE("retune shifts by p = 36 log2(tau / 440)") {
  Rng rng(3);
  LogSpectrogram spec;
  spec.frames = random_nonneg(rng, 2, 252);
  TuningEstimate t;
  Notegram out = retune(spec, t);
  CHECK(out.frames == spec.frames);
  t.tau = 440.0 * std::pow(2.0, 1.0 / 12.0);
  out = retune(spec, t);
  for (int k = 0; k < 252; ++k) {
    CHECK(out.frames(1, k) == (k + 3 < 252 ? spec.frames(1, k + 3) : 0.0));
  }
  t.tau = 440.0 * std::pow(2.0, 1.0 / 72.0);
  out = retune(spec, t);
  for (int k = 0; k < 251; ++k) {
    CHECK(out.frames(0, k) == doctest::Approx(0.5 * (spec.frames(0, k) + spec.frames(0, k + 1))).epsilon(1e-12));
  }
  CHECK(out.frames(0, 251) == doctest::Approx(0.5 * spec.frames(0, 251)));
}

TEST_CASE("standardization") {
  Notegram ng;
  ng.frames = Matrix::Constant(1, 252, 0.7);
  CHECK(standardize(ng).frames.isZero(0.0));
  ng.frames.setZero();
  ng.frames(0, 100) = 5.0;
  Notegram s = standardize(ng);
  CHECK(s.frames(0, 100) > 0.0);
  for (int k = 91; k <= 109; ++k) {
    if (k != 100) CHECK(s.frames(0, k) == 0.0);
  }
  // Oracle: mean and population std of the 19-bin window.
  const double mu = 5.0 / 19.0;
  const double sigma = std::sqrt((std::pow(5.0 - mu, 2) + 18 * mu * mu) / 19.0);
  CHECK(s.frames(0, 100) == doctest::Approx((5.0 - mu) / sigma).epsilon(1e-12));
  // At the edge the window is truncated to bins 0..9.
  ng.frames.setZero();
  ng.frames(0, 0) = 1.0;
  s = standardize(ng);
  const double mu0 = 0.1, sd0 = std::sqrt((0.81 + 9 * 0.01) / 10.0);
  CHECK(s.frames(0, 0) == doctest::Approx((1.0 - mu0) / sd0).epsilon(1e-12));
  Rng rng(8);
  ng.frames = random_nonneg(rng, 5, 252);
  CHECK((standardize(ng).frames.array() >= 0.0).all());
}

TEST_CASE("NNLS dictionary") {
  const Matrix e = build_nnls_dictionary(0.7, 20);
  CHECK(e.rows() == 252);
  CHECK(e.cols() == 84);
  CHECK((e.array() >= 0.0).all());
  for (int l = 0; l < 84; ++l) {
    CHECK(e.col(l).maxCoeff() > 0.0);
    CHECK(e(1 + 3 * l, l) == doctest::Approx(1.0).epsilon(1e-12));
    if (1 + 3 * l + 36 < 252) CHECK(e(1 + 3 * l + 36, l) == doctest::Approx(0.7).epsilon(1e-12));
  }
  CHECK(build_nnls_dictionary(0.6, 20)(1 + 36, 0) == doctest::Approx(0.6));
  CHECK_THROWS_AS(build_nnls_dictionary(1.0, 20), Error);
  CHECK_THROWS_AS(build_nnls_dictionary(0.0, 20), Error);
}

TEST_CASE("NNLS basic cases") {
  const Matrix e = build_nnls_dictionary();
  const NnlsSolver solver(e);
  CHECK(solver.max_iterations() == 3 * 84);
  NnlsResult r = solver.solve(Vector::Zero(252));
  CHECK(r.x.isZero(0.0));
  for (int j : {0, 17, 40, 83}) {
    const Vector y = e.col(j);
    r = solver.solve(y);
    CAPTURE(j);
    Vector ej = Vector::Zero(84);
    ej(j) = 1.0;
    CHECK((r.x - ej).cwiseAbs().maxCoeff() < 1e-9);
  }
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Vector y(252);
    for (int k = 0; k < 252; ++k) y(k) = rng.uniform() < 0.1 ? rng.uniform(0.0, 4.0) : 0.0;
    r = solver.solve(y);
    CHECK((r.x.array() >= 0.0).all());
    CHECK((e * r.x - y).norm() <= y.norm() + 1e-12);
    const double tol = 1e-8 * (e.transpose() * y).cwiseAbs().maxCoeff();
    CHECK(oracle::nnls_kkt(e, y, r.x, tol));
  }
}

TEST_CASE("NNLS matches the projected-gradient and enumeration oracles") {
  Rng rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    const Matrix e = random_nonneg(rng, 6, 4);
    Vector y(6);
    for (int i = 0; i < 6; ++i) y(i) = rng.uniform(-0.5, 1.0);
    y = y.cwiseMax(0.0);
    const Vector x = nnls_solve(e, y).x;
    const Vector pg = oracle::nnls_projected_gradient(e, y, 200000);
    const Vector ex = oracle::nnls_enumerate(e, y);
    CHECK((x - ex).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((x - pg).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK_THROWS_AS(nnls_solve(Matrix::Ones(6, 4), Vector::Ones(5)), Error);
}

TEST_CASE("Rayleigh profiles and chroma folding") {
  const Vector bass = bass_profile(), treble = treble_profile();
  CHECK(bass.maxCoeff() == doctest::Approx(1.0));
  CHECK(treble.maxCoeff() == doctest::Approx(1.0));
  Eigen::Index peak = 0;
  bass.maxCoeff(&peak);
  // r(l) = l/s^2 exp(-l^2/2s^2) peaks at l = s, i.e. note index round(16.8) - 1.
  CHECK(peak == 16);
  treble.maxCoeff(&peak);
  CHECK(peak == 41);
  CHECK(bass(16) >= bass(83));
  CHECK(bass(83) < 0.01);

  NnlsNotegram nn;
  nn.frames = Matrix::Zero(2, 84);
  nn.frames(0, 30) = 0.4;  // MIDI 51, pitch class 3
  const Chromagram c = profile_to_chroma(nn);
  for (int pc = 0; pc < 12; ++pc) {
    CHECK(c.frames(0, pc) == (pc == 3 ? 1.0 : 0.0));
    CHECK(c.frames(0, 12 + pc) == (pc == 3 ? 1.0 : 0.0));
  }
  CHECK(c.frames.row(1).isZero(0.0));
  // Two notes: the oracle ratio is the ratio of Rayleigh weights.
  nn.frames.setZero();
  nn.frames(0, 19) = 1.0;  // MIDI 40, E
  nn.frames(0, 50) = 1.0;  // MIDI 71, B
  const Chromagram d = profile_to_chroma(nn);
  const double wb40 = bass(19), wb71 = bass(50);
  CHECK(d.frames(0, 4) == doctest::Approx(1.0));
  CHECK(d.frames(0, 11) == doctest::Approx(wb71 / wb40).epsilon(1e-12));
}

TEST_CASE("pitch shifting") {
  Rng rng(9);
  const Matrix chroma = random_nonneg(rng, 4, 24);
  CHECK(pitch_shift_chroma_frames(chroma, 0) == chroma);
  CHECK(pitch_shift_chroma_frames(chroma, 12) == chroma);
  CHECK(pitch_shift_chroma_frames(pitch_shift_chroma_frames(chroma, 5), -5) == chroma);
  const Matrix up = pitch_shift_chroma_frames(chroma, 2);
  for (int c = 0; c < 12; ++c) {
    CHECK(up(0, (c + 2) % 12) == chroma(0, c));
    CHECK(up(0, 12 + (c + 2) % 12) == chroma(0, 12 + c));
  }
  const Matrix ng = random_nonneg(rng, 3, 252) + Matrix::Constant(3, 252, 0.1);
  CHECK(pitch_shift_notegram_frames(ng, 0) == ng);
  const Matrix down_up = pitch_shift_notegram_frames(pitch_shift_notegram_frames(ng, -2), 2);
  const Matrix up_down = pitch_shift_notegram_frames(pitch_shift_notegram_frames(ng, 2), -2);
  for (int k = 0; k < 252; ++k) {
    CHECK(down_up(1, k) == (k < 6 ? 0.0 : ng(1, k)));
    CHECK(up_down(1, k) == (k >= 246 ? 0.0 : ng(1, k)));
  }
  const Matrix shifted = pitch_shift_notegram_frames(ng, 1);
  CHECK(shifted(0, 10) == ng(0, 7));
}

TEST_CASE("full front end on an in-tune chord") {
  std::vector<double> freqs;
  for (int midi : {36, 60, 64, 67}) freqs.push_back(midi_hz(midi));  // C major, C bass
  const TrackFeatures f = extract_features(tone_mix(freqs, 3.0, 6));
  const int m = frame_count(static_cast<std::size_t>(3.0 * 11025));
  CHECK(f.notegram.frames.rows() == m);
  CHECK(f.notegram.frames.cols() == 252);
  CHECK(f.chroma.frames.rows() == m);
  CHECK(f.chroma.frames.cols() == 24);
  CHECK(std::abs(f.tuning.delta) < 0.05);
  CHECK((f.notegram.frames.array() >= 0.0).all());
  for (Eigen::Index r = 0; r < f.chroma.frames.rows(); ++r) {
    for (int off : {0, 12}) {
      const auto half = f.chroma.frames.row(r).segment(off, 12);
      CHECK((half.array() >= 0.0).all());
      CHECK((half.array() <= 1.0 + 1e-12).all());
      const double peak = half.maxCoeff();
      CHECK((peak == 0.0 || std::abs(peak - 1.0) < 1e-12));
    }
  }
  const Eigen::RowVectorXd mean = f.chroma.frames.colwise().mean();
  Eigen::Index bass_arg = 0, treble_arg = 0;
  mean.segment(0, 12).maxCoeff(&bass_arg);
  mean.segment(12, 12).maxCoeff(&treble_arg);
  CHECK(bass_arg == 0);
  CHECK((treble_arg == 0 || treble_arg == 4 || treble_arg == 7));
  // Resampled input gives the same frame count.
  const TrackFeatures g = extract_features(tone_mix(freqs, 3.0, 6, 22050.0));
  CHECK(g.chroma.frames.rows() == m);
}

TEST_CASE("feature files round-trip exactly") {
  TempDir dir;
  Rng rng(4);
  const Matrix m = random_nonneg(rng, 7, 24) * 1e-3;
  write_feature_file(dir.path / "a.chroma", FeatureKind::kChroma, m, kHopSeconds);
  const FeatureFile f = read_feature_file(dir.path / "a.chroma");
  CHECK(f.kind == FeatureKind::kChroma);
  CHECK(f.frames == m);
  CHECK(f.hop_seconds == kHopSeconds);
  CHECK(slurp(dir.path / "a.chroma").rfind("CHROMA 1 7 24 ", 0) == 0);
  std::ofstream(dir.path / "bad.chroma") << "CHROMA 1 3 24 0.04\n1 2 3\n";
  CHECK_THROWS_AS(read_feature_file(dir.path / "bad.chroma"), Error);
}
