#pragma once

#include "lvace/chordvocab.hpp"
#include "lvace/common.hpp"
#include "lvace/features.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace lvace {

struct HmmSpec {
  Matrix means;      // states x 24
  Matrix variances;  // states x 24
  double self_weight = 99.99;
  Vector log_priors;
  Matrix log_transitions;  // states x states, row = from

  int num_states() const { return static_cast<int>(means.rows()); }
};

// 217-state chord HMM with the role-dependent Gaussian emissions.
HmmSpec build_hmm(double self_weight = 99.99);

double log_emission(const HmmSpec& hmm, int state, const Eigen::Ref<const Eigen::RowVectorXd>& x);

struct Segment {
  int start_frame = 0;
  int end_frame = 0;  // exclusive
  std::optional<ChordLabel> label;

  int length() const { return end_frame - start_frame; }
  bool operator==(const Segment&) const = default;
};

// Generic log-domain Viterbi. log_emissions is frames x states. Ties resolve
// toward the lower state index both for predecessors and for the final state.
std::vector<int> viterbi_path(const Vector& log_priors, const Matrix& log_transitions,
                              const Matrix& log_emissions);
double path_log_probability(const Vector& log_priors, const Matrix& log_transitions,
                            const Matrix& log_emissions, const std::vector<int>& path);

std::vector<Segment> viterbi(const HmmSpec& hmm, const Chromagram& chroma);

// Merges runs of equal states into segments labeled from_state_index(state).
std::vector<Segment> segments_from_path(const std::vector<int>& path);

struct TimedLabel {
  double start_sec = 0.0;
  double end_sec = 0.0;
  ChordLabel label;
};

int seconds_to_frame(double seconds, double hop_seconds);
double frame_to_seconds(int frame, double hop_seconds);

std::vector<Segment> segment_by_ground_truth(const std::vector<TimedLabel>& annotations,
                                             double hop_seconds, int num_frames);

// Averages an m x D block into N rows, extending the last frame so N | m.
Matrix tile_segment(const Eigen::Ref<const Matrix>& frames, int n);

struct TiledSegment {
  Matrix frames;
  std::optional<ChordLabel> label;
};

void write_segments(const std::filesystem::path& path, const std::vector<Segment>& segments);
std::vector<Segment> read_segments(const std::filesystem::path& path);

}  // namespace lvace
