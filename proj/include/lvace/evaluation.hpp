#pragma once

// Chord-recall metrics (CSR, WCSR, per-chord WCSR, ACQA) and directional
// Hamming segmentation quality over timed label sequences.

#include "lvace/chordvocab.hpp"
#include "lvace/segmentation.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace lvace {

using TimedSegment = TimedLabel;

enum class EvalVocabulary { kMajMin, kMajMinBass, kSevenths, kSeventhsBass };

EvalVocabulary parse_vocabulary(std::string_view name);
const char* vocabulary_name(EvalVocabulary vocab);

std::vector<TimedSegment> parse_lab(const std::filesystem::path& path,
                                    LabelParsing mode = LabelParsing::kLenient);
std::vector<TimedSegment> parse_lab_text(std::string_view text,
                                         LabelParsing mode = LabelParsing::kLenient,
                                         const std::string& source = "<text>");
void write_lab(const std::filesystem::path& path, const std::vector<TimedSegment>& segments);

ChordLabel map_vocabulary(const ChordLabel& label, EvalVocabulary vocab);

double csr(const std::vector<TimedSegment>& estimated, const std::vector<TimedSegment>& truth,
           EvalVocabulary vocab = EvalVocabulary::kSeventhsBass);

struct TrackPair {
  std::string id;
  std::vector<TimedSegment> estimated;
  std::vector<TimedSegment> truth;
};

double truth_duration(const std::vector<TimedSegment>& truth);

double wcsr(const std::vector<TrackPair>& tracks,
            EvalVocabulary vocab = EvalVocabulary::kSeventhsBass);

// Absent (nullopt) when the chord type has no ground-truth instance. The
// chord type is the root-independent quality name ("maj/3", "7", "N").
std::optional<double> per_chord_wcsr(const std::vector<TrackPair>& tracks,
                                     const std::string& chord_type,
                                     EvalVocabulary vocab = EvalVocabulary::kSeventhsBass);

double acqa(const std::vector<TrackPair>& tracks,
            EvalVocabulary vocab = EvalVocabulary::kSeventhsBass);

// Directional Hamming distance h(a || b) = sum_i (|a_i| - max_j |a_i n b_j|).
double directional_hamming(const std::vector<TimedSegment>& a, const std::vector<TimedSegment>& b);
double segmentation_quality(const std::vector<TimedSegment>& estimated,
                            const std::vector<TimedSegment>& truth);

// Clips the estimate to the truth span and fills any uncovered head or tail
// with NoChord so that estimate and truth partition the same interval.
std::vector<TimedSegment> conform_to_truth(const std::vector<TimedSegment>& estimated,
                                           const std::vector<TimedSegment>& truth);

struct TrackScore {
  std::string id;
  double duration = 0.0;
  double csr = 0.0;
  double seg_quality = 0.0;
};

struct EvalReport {
  EvalVocabulary vocab = EvalVocabulary::kSeventhsBass;
  std::vector<TrackScore> per_track;
  double wcsr = 0.0;
  std::map<std::string, double> per_chord_wcsr;  // present chord types only
  double acqa = 0.0;
  double seg_quality = 0.0;  // duration-weighted mean over tracks
};

EvalReport evaluate(const std::vector<TrackPair>& tracks,
                    EvalVocabulary vocab = EvalVocabulary::kSeventhsBass);

// TRACK / CHORD / SUMMARY lines.
void write_report_lines(std::ostream& out, const EvalReport& report);
void write_report_table(std::ostream& out, const EvalReport& report);

}  // namespace lvace
