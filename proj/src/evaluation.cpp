#include "lvace/evaluation.hpp"

#include "lvace/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace lvace {

namespace {

constexpr double kSnap = 1e-9;

double overlap(const TimedSegment& a, const TimedSegment& b) {
  const double v = std::min(a.end_sec, b.end_sec) - std::max(a.start_sec, b.start_sec);
  return v > kSnap ? v : 0.0;
}

double length(const TimedSegment& s) { return s.end_sec - s.start_sec; }

// Correctly labeled duration of estimated vs. one truth interval.
double matched_duration(const std::vector<TimedSegment>& estimated, const TimedSegment& truth,
                        EvalVocabulary vocab) {
  const ChordLabel want = map_vocabulary(truth.label, vocab);
  double acc = 0.0;
  for (const auto& e : estimated) {
    if (e.end_sec <= truth.start_sec || e.start_sec >= truth.end_sec) continue;
    if (map_vocabulary(e.label, vocab) == want) acc += overlap(e, truth);
  }
  return acc;
}

std::vector<std::string> canonical_chord_types() {
  std::vector<std::string> types;
  for (const auto& q : all_qualities()) types.push_back(quality_name(q));
  types.emplace_back("N");
  return types;
}

void check_partition(const std::vector<TimedSegment>& s, const char* which) {
  if (s.empty()) throw Error(ErrorCode::kCoverageMismatch, std::string(which) + " is empty");
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (std::abs(s[i].start_sec - s[i - 1].end_sec) > kSnap) {
      throw Error(ErrorCode::kCoverageMismatch,
                  std::string(which) + " has a gap or overlap at " + std::to_string(s[i].start_sec));
    }
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

EvalVocabulary parse_vocabulary(std::string_view name) {
  if (name == "MajMin") return EvalVocabulary::kMajMin;
  if (name == "MajMinBass") return EvalVocabulary::kMajMinBass;
  if (name == "Sevenths") return EvalVocabulary::kSevenths;
  if (name == "SeventhsBass") return EvalVocabulary::kSeventhsBass;
  throw Error(ErrorCode::kInvalidArgument, "unknown vocabulary '" + std::string(name) + "'");
}

const char* vocabulary_name(EvalVocabulary vocab) {
  switch (vocab) {
    case EvalVocabulary::kMajMin: return "MajMin";
    case EvalVocabulary::kMajMinBass: return "MajMinBass";
    case EvalVocabulary::kSevenths: return "Sevenths";
    case EvalVocabulary::kSeventhsBass: return "SeventhsBass";
  }
  return "";
}

std::vector<TimedSegment> parse_lab_text(std::string_view text, LabelParsing mode,
                                         const std::string& source) {
  std::vector<TimedSegment> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    TimedSegment seg;
    std::string label;
    const auto where = source + ":" + std::to_string(lineno);
    if (!(fields >> seg.start_sec >> seg.end_sec >> label)) {
      throw Error(ErrorCode::kParse, where + ": expected '<start> <end> <label>'");
    }
    if (!(seg.end_sec > seg.start_sec) || seg.start_sec < 0.0) {
      throw Error(ErrorCode::kParse, where + ": segment must satisfy 0 <= start < end");
    }
    try {
      seg.label = parse_label(label, mode);
    } catch (const Error& e) {
      throw Error(ErrorCode::kParse, where + ": " + e.what());
    }
    out.push_back(seg);
  }
  std::stable_sort(out.begin(), out.end(), [](const TimedSegment& a, const TimedSegment& b) {
    return a.start_sec < b.start_sec;
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].start_sec < out[i - 1].end_sec - kSnap) {
      throw Error(ErrorCode::kOverlap, source + ": segments starting at " +
                                           std::to_string(out[i - 1].start_sec) + " and " +
                                           std::to_string(out[i].start_sec) + " overlap");
    }
  }
  return out;
}

std::vector<TimedSegment> parse_lab(const std::filesystem::path& path, LabelParsing mode) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_lab_text(text, mode, path.string());
}

void write_lab(const std::filesystem::path& path, const std::vector<TimedSegment>& segments) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& s : segments) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f %.6f ", s.start_sec, s.end_sec);
    out << buf << print_label(s.label) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ChordLabel map_vocabulary(const ChordLabel& label, EvalVocabulary vocab) {
  if (label.is_no_chord() || vocab == EvalVocabulary::kSeventhsBass) return label;
  const ChordQuality q = label.quality();
  const bool minor = q.kind == ChordKind::kMin || q.kind == ChordKind::kMin7;
  const ChordKind triad = minor ? ChordKind::kMin : ChordKind::kMaj;
  switch (vocab) {
    case EvalVocabulary::kMajMin:
      return ChordLabel(label.root(), {triad, 0});
    case EvalVocabulary::kMajMinBass: {
      const auto tones = chord_intervals(triad);
      const bool keep = std::find(tones.begin(), tones.end(), q.bass_interval) != tones.end();
      return ChordLabel(label.root(), {triad, keep ? q.bass_interval : 0});
    }
    case EvalVocabulary::kSevenths:
      return ChordLabel(label.root(), {q.kind, 0});
    case EvalVocabulary::kSeventhsBass:
      break;
  }
  return label;
}

double truth_duration(const std::vector<TimedSegment>& truth) {
  double total = 0.0;
  for (const auto& t : truth) total += length(t);
  return total;
}

double csr(const std::vector<TimedSegment>& estimated, const std::vector<TimedSegment>& truth,
           EvalVocabulary vocab) {
  const double total = truth_duration(truth);
  if (!(total > 0.0)) throw Error(ErrorCode::kEmptyTruth, "ground truth has zero duration");
  double matched = 0.0;
  for (const auto& t : truth) matched += matched_duration(estimated, t, vocab);
  return matched / total;
}

double wcsr(const std::vector<TrackPair>& tracks, EvalVocabulary vocab) {
  double weighted = 0.0, total = 0.0;
  for (const auto& t : tracks) {
    const double len = truth_duration(t.truth);
    weighted += len * csr(t.estimated, t.truth, vocab);
    total += len;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kEmptyTruth, "no ground-truth duration in corpus");
  return weighted / total;
}

std::optional<double> per_chord_wcsr(const std::vector<TrackPair>& tracks,
                                     const std::string& chord_type, EvalVocabulary vocab) {
  double matched = 0.0, total = 0.0;
  for (const auto& track : tracks) {
    for (const auto& t : track.truth) {
      if (chord_type_name(map_vocabulary(t.label, vocab)) != chord_type) continue;
      // Length(C_i) * CSR_i reduces to the matched duration of the instance.
      matched += matched_duration(track.estimated, t, vocab);
      total += length(t);
    }
  }
  if (!(total > 0.0)) return std::nullopt;
  return matched / total;
}

double acqa(const std::vector<TrackPair>& tracks, EvalVocabulary vocab) {
  double sum = 0.0;
  int present = 0;
  for (const auto& type : canonical_chord_types()) {
    if (const auto v = per_chord_wcsr(tracks, type, vocab)) {
      sum += *v;
      ++present;
    }
  }
  if (present == 0) throw Error(ErrorCode::kEmptyTruth, "no chord type present in ground truth");
  return sum / present;
}

double directional_hamming(const std::vector<TimedSegment>& a, const std::vector<TimedSegment>& b) {
  double h = 0.0;
  for (const auto& ai : a) {
    double best = 0.0;
    for (const auto& bj : b) best = std::max(best, overlap(ai, bj));
    h += length(ai) - best;
  }
  return h;
}

double segmentation_quality(const std::vector<TimedSegment>& estimated,
                            const std::vector<TimedSegment>& truth) {
  check_partition(truth, "ground truth");
  check_partition(estimated, "estimate");
  if (std::abs(estimated.front().start_sec - truth.front().start_sec) > kSnap ||
      std::abs(estimated.back().end_sec - truth.back().end_sec) > kSnap) {
    throw Error(ErrorCode::kCoverageMismatch, "estimate and truth cover different spans");
  }
  const double span = truth.back().end_sec - truth.front().start_sec;
  const double h = std::max(directional_hamming(truth, estimated), directional_hamming(estimated, truth));
  return std::clamp(1.0 - h / span, 0.0, 1.0);
}

std::vector<TimedSegment> conform_to_truth(const std::vector<TimedSegment>& estimated,
                                           const std::vector<TimedSegment>& truth) {
  if (truth.empty()) throw Error(ErrorCode::kEmptyTruth, "ground truth is empty");
  const double lo = truth.front().start_sec;
  const double hi = truth.back().end_sec;
  std::vector<TimedSegment> out;
  double cursor = lo;
  for (const auto& e : estimated) {
    const double s = std::max(e.start_sec, cursor);
    const double t = std::min(e.end_sec, hi);
    if (t - s <= kSnap) continue;
    if (s - cursor > kSnap) out.push_back({cursor, s, ChordLabel::no_chord()});
    out.push_back({s, t, e.label});
    cursor = t;
  }
  if (hi - cursor > kSnap) {
    out.push_back({cursor, hi, ChordLabel::no_chord()});
  } else if (!out.empty()) {
    out.back().end_sec = hi;
  }
  return out;
}

EvalReport evaluate(const std::vector<TrackPair>& tracks, EvalVocabulary vocab) {
  EvalReport report;
  report.vocab = vocab;
  double total = 0.0, seg_weighted = 0.0;
  for (const auto& t : tracks) {
    TrackScore score;
    score.id = t.id;
    score.duration = truth_duration(t.truth);
    score.csr = csr(t.estimated, t.truth, vocab);
    score.seg_quality = segmentation_quality(conform_to_truth(t.estimated, t.truth), t.truth);
    total += score.duration;
    seg_weighted += score.duration * score.seg_quality;
    report.per_track.push_back(score);
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kEmptyTruth, "no ground-truth duration in corpus");
  report.wcsr = wcsr(tracks, vocab);
  report.seg_quality = seg_weighted / total;
  for (const auto& type : canonical_chord_types()) {
    if (const auto v = per_chord_wcsr(tracks, type, vocab)) report.per_chord_wcsr[type] = *v;
  }
  report.acqa = acqa(tracks, vocab);
  return report;
}

void write_report_lines(std::ostream& out, const EvalReport& report) {
  for (const auto& t : report.per_track) {
    out << "TRACK " << t.id << ' ' << fmt(t.duration) << ' ' << fmt(t.csr) << ' '
        << fmt(t.seg_quality) << '\n';
  }
  for (const auto& type : canonical_chord_types()) {
    if (auto it = report.per_chord_wcsr.find(type); it != report.per_chord_wcsr.end()) {
      out << "CHORD " << type << ' ' << fmt(it->second) << '\n';
    }
  }
  out << "SUMMARY WCSR " << fmt(report.wcsr) << " ACQA " << fmt(report.acqa) << " SEG "
      << fmt(report.seg_quality) << '\n';
}

void write_report_table(std::ostream& out, const EvalReport& report) {
  char buf[160];
  out << "Evaluation vocabulary: " << vocabulary_name(report.vocab) << "\n\n";
  std::snprintf(buf, sizeof buf, "%-24s %10s %8s %8s\n", "track", "dur (s)", "CSR", "SEG");
  out << buf;
  for (const auto& t : report.per_track) {
    std::snprintf(buf, sizeof buf, "%-24s %10.2f %8.4f %8.4f\n", t.id.c_str(), t.duration, t.csr,
                  t.seg_quality);
    out << buf;
  }
  out << "\nper-chord WCSR\n";
  for (const auto& type : canonical_chord_types()) {
    if (auto it = report.per_chord_wcsr.find(type); it != report.per_chord_wcsr.end()) {
      std::snprintf(buf, sizeof buf, "  %-10s %8.4f\n", type.c_str(), it->second);
      out << buf;
    }
  }
  std::snprintf(buf, sizeof buf, "\nWCSR %.4f   ACQA %.4f   SEG %.4f\n", report.wcsr, report.acqa,
                report.seg_quality);
  out << buf;
}

}  // namespace lvace
