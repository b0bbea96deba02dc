#include "lvace/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace lvace {

namespace {

// Frames between a window start and the boundary time assigned to it:
// half a window minus half a hop, in hops.
constexpr double kBoundaryOffsetHops = 0.5 * kFftSize / kHopSize - 0.5;

// Sum of -0.5 log(2 pi var) over dims, added in sorted order so states whose
// variances are permutations of each other (inversions) tie exactly.
double log_norm_constant(const Eigen::Ref<const Eigen::RowVectorXd>& variances) {
  std::vector<double> terms(static_cast<std::size_t>(variances.size()));
  for (Eigen::Index d = 0; d < variances.size(); ++d) {
    terms[static_cast<std::size_t>(d)] = -0.5 * std::log(2.0 * std::numbers::pi * variances(d));
  }
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

static_assert(kBassChromaOffset == 0 && kTrebleChromaOffset == 12 && kChromaDims == 24,
              "HMM emission layout assumes bass chroma first, treble second");

}  // namespace

HmmSpec build_hmm(double self_weight) {
  if (!(self_weight > 0.0)) throw Error(ErrorCode::kInvalidParameter, "self weight must be > 0");
  HmmSpec hmm;
  hmm.self_weight = self_weight;
  hmm.means = Matrix::Zero(kNumChordStates, kChromaDims);
  hmm.variances = Matrix::Zero(kNumChordStates, kChromaDims);
  for (int s = 0; s < kNumChordStates; ++s) {
    const ChordLabel label = from_state_index(s);
    if (label.is_no_chord()) {
      hmm.means.row(s).setConstant(1.0);
      hmm.variances.row(s).setConstant(0.2);
      continue;
    }
    const ChordTemplate t = template_of(label);
    for (int pc = 0; pc < 12; ++pc) {
      const bool chord_note =
          std::find(t.pitch_classes.begin(), t.pitch_classes.end(), PitchClass(pc)) !=
          t.pitch_classes.end();
      const bool bass = t.bass == PitchClass(pc);
      const int b = kBassChromaOffset + pc;
      if (bass) {
        hmm.means(s, b) = 1.0;
        hmm.variances(s, b) = 0.1;
      } else if (chord_note) {
        hmm.means(s, b) = 1.0;
        hmm.variances(s, b) = 0.5;
      } else {
        hmm.means(s, b) = 0.0;
        hmm.variances(s, b) = 0.1;
      }
      const int tr = kTrebleChromaOffset + pc;
      hmm.means(s, tr) = chord_note ? 1.0 : 0.0;
      hmm.variances(s, tr) = 0.2;
    }
  }
  hmm.log_priors = Vector::Constant(kNumChordStates, -std::log(static_cast<double>(kNumChordStates)));
  const double norm = self_weight + (kNumChordStates - 1);
  hmm.log_transitions = Matrix::Constant(kNumChordStates, kNumChordStates, std::log(1.0 / norm));
  hmm.log_transitions.diagonal().setConstant(std::log(self_weight / norm));
  return hmm;
}

double log_emission(const HmmSpec& hmm, int state, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  if (x.size() != hmm.means.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "chroma vector has wrong dimension");
  }
  double quad = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double diff = x(d) - hmm.means(state, d);
    quad += diff * diff / (2.0 * hmm.variances(state, d));
  }
  return log_norm_constant(hmm.variances.row(state)) - quad;
}

std::vector<int> viterbi_path(const Vector& log_priors, const Matrix& log_transitions,
                              const Matrix& log_emissions) {
  const Eigen::Index states = log_priors.size();
  const Eigen::Index frames = log_emissions.rows();
  if (frames == 0) return {};
  if (log_emissions.cols() != states || log_transitions.rows() != states ||
      log_transitions.cols() != states) {
    throw Error(ErrorCode::kShapeMismatch, "inconsistent HMM dimensions");
  }
  std::vector<int> back(static_cast<std::size_t>(frames * states), 0);
  Vector score = log_priors + log_emissions.row(0).transpose();
  Vector next(states);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      Eigen::Index arg = 0;
      for (Eigen::Index j = 0; j < states; ++j) {
        const double v = score(j) + log_transitions(j, s);
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      next(s) = best + log_emissions(t, s);
      back[static_cast<std::size_t>(t * states + s)] = static_cast<int>(arg);
    }
    std::swap(score, next);
  }
  std::vector<int> path(static_cast<std::size_t>(frames));
  Eigen::Index last = 0;
  for (Eigen::Index s = 1; s < states; ++s) {
    if (score(s) > score(last)) last = s;
  }
  path.back() = static_cast<int>(last);
  for (Eigen::Index t = frames - 1; t > 0; --t) {
    path[static_cast<std::size_t>(t - 1)] =
        back[static_cast<std::size_t>(t * states + path[static_cast<std::size_t>(t)])];
  }
  return path;
}

double path_log_probability(const Vector& log_priors, const Matrix& log_transitions,
                            const Matrix& log_emissions, const std::vector<int>& path) {
  double acc = log_priors(path.front()) + log_emissions(0, path.front());
  for (std::size_t t = 1; t < path.size(); ++t) {
    acc += log_transitions(path[t - 1], path[t]);
    acc += log_emissions(static_cast<Eigen::Index>(t), path[t]);
  }
  return acc;
}

std::vector<Segment> segments_from_path(const std::vector<int>& path) {
  std::vector<Segment> out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (t == 0 || path[t] != path[t - 1]) {
      out.push_back({static_cast<int>(t), static_cast<int>(t) + 1, from_state_index(path[t])});
    } else {
      out.back().end_frame = static_cast<int>(t) + 1;
    }
  }
  return out;
}

std::vector<Segment> viterbi(const HmmSpec& hmm, const Chromagram& chroma) {
  const Eigen::Index frames = chroma.frames.rows();
  if (frames == 0) throw Error(ErrorCode::kInvalidArgument, "empty chromagram");
  if (chroma.frames.cols() != hmm.means.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "chromagram dimension does not match HMM");
  }
  // Same arithmetic as log_emission, with the constants hoisted.
  Vector constants(hmm.num_states());
  for (int s = 0; s < hmm.num_states(); ++s) constants(s) = log_norm_constant(hmm.variances.row(s));
  Matrix emissions(frames, hmm.num_states());
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int s = 0; s < hmm.num_states(); ++s) {
      double quad = 0.0;
      for (Eigen::Index d = 0; d < chroma.frames.cols(); ++d) {
        const double diff = chroma.frames(t, d) - hmm.means(s, d);
        quad += diff * diff / (2.0 * hmm.variances(s, d));
      }
      emissions(t, s) = constants(s) - quad;
    }
  }
  return segments_from_path(viterbi_path(hmm.log_priors, hmm.log_transitions, emissions));
}

int seconds_to_frame(double seconds, double hop_seconds) {
  if (seconds <= 0.0) return 0;
  const double pos = seconds / hop_seconds - kBoundaryOffsetHops;
  return std::max(0, static_cast<int>(std::lround(pos)));
}

double frame_to_seconds(int frame, double hop_seconds) {
  if (frame <= 0) return 0.0;
  return (frame + kBoundaryOffsetHops) * hop_seconds;
}

std::vector<Segment> segment_by_ground_truth(const std::vector<TimedLabel>& annotations,
                                             double hop_seconds, int num_frames) {
  constexpr double kSnap = 1e-9;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    if (!(a.end_sec > a.start_sec)) {
      throw Error(ErrorCode::kInvalidAnnotation, "annotation " + std::to_string(i) +
                                                     " has non-positive duration");
    }
    if (i > 0 && a.start_sec < annotations[i - 1].end_sec - kSnap) {
      throw Error(ErrorCode::kInvalidAnnotation,
                  "annotation " + std::to_string(i) + " overlaps or precedes its predecessor");
    }
  }
  std::vector<Segment> out;
  int cursor = 0;
  for (const auto& a : annotations) {
    const int start = std::clamp(seconds_to_frame(a.start_sec, hop_seconds), 0, num_frames);
    const int end = std::clamp(seconds_to_frame(a.end_sec, hop_seconds), 0, num_frames);
    if (start > cursor) {
      out.push_back({cursor, start, ChordLabel::no_chord()});
      cursor = start;
    }
    if (end > cursor) {
      out.push_back({cursor, end, a.label});
      cursor = end;
    }
  }
  if (cursor < num_frames) out.push_back({cursor, num_frames, ChordLabel::no_chord()});
  return out;
}

Matrix tile_segment(const Eigen::Ref<const Matrix>& frames, int n) {
  const auto m = static_cast<int>(frames.rows());
  if (m < 1 || n < 1) throw Error(ErrorCode::kInvalidArgument, "tiling needs m >= 1 and N >= 1");
  const int per = (m + n - 1) / n;  // m' / N
  Matrix out = Matrix::Zero(n, frames.cols());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < per; ++j) out.row(i) += frames.row(std::min(i * per + j, m - 1));
    out.row(i) /= per;
  }
  return out;
}

void write_segments(const std::filesystem::path& path, const std::vector<Segment>& segments) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& s : segments) {
    out << s.start_frame << ' ' << s.end_frame << ' ' << (s.label ? print_label(*s.label) : "-")
        << '\n';
  }
}

std::vector<Segment> read_segments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<Segment> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    Segment s;
    std::string label;
    if (!(fields >> s.start_frame >> s.end_frame >> label)) {
      throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(lineno) + ": bad segment");
    }
    if (label != "-") s.label = parse_label(label);
    out.push_back(s);
  }
  return out;
}

}  // namespace lvace
