#include "lvace/chordvocab.hpp"

#include "lvace/common.hpp"

#include <algorithm>
#include <cctype>

namespace lvace {

namespace {

constexpr std::array<const char*, 12> kRootNames = {"C",  "C#", "D",  "D#", "E",  "F",
                                                    "F#", "G",  "G#", "A",  "A#", "B"};

// Harte qualities that are well formed but fall outside SeventhsBass.
constexpr std::array<std::string_view, 22> kForeignQualities = {
    "dim",  "aug",  "sus2", "sus4", "maj6", "min6",  "6",     "9",
    "maj9", "min9", "11",   "13",   "maj11", "min11", "maj13", "min13",
    "hdim7", "dim7", "minmaj7", "1", "5", "aug7"};

constexpr std::array<std::string_view, 12> kForeignDegrees = {
    "1", "2", "b2", "#2", "4", "#4", "b5", "#5", "6", "b6", "9", "b9"};

std::optional<int> degree_interval(std::string_view degree) {
  if (degree == "3") return 4;
  if (degree == "b3") return 3;
  if (degree == "5") return 7;
  if (degree == "7") return 11;
  if (degree == "b7") return 10;
  return std::nullopt;
}

const char* interval_degree(int interval) {
  switch (interval) {
    case 3: return "b3";
    case 4: return "3";
    case 7: return "5";
    case 10: return "b7";
    case 11: return "7";
    default: return "";
  }
}

const char* kind_name(ChordKind kind) {
  switch (kind) {
    case ChordKind::kMaj: return "maj";
    case ChordKind::kMin: return "min";
    case ChordKind::kMaj7: return "maj7";
    case ChordKind::kDom7: return "7";
    case ChordKind::kMin7: return "min7";
  }
  return "";
}

std::optional<ChordKind> parse_kind(std::string_view text) {
  if (text == "maj") return ChordKind::kMaj;
  if (text == "min") return ChordKind::kMin;
  if (text == "maj7") return ChordKind::kMaj7;
  if (text == "7") return ChordKind::kDom7;
  if (text == "min7") return ChordKind::kMin7;
  return std::nullopt;
}

std::optional<int> parse_root(std::string_view text) {
  if (text.empty()) return std::nullopt;
  static constexpr std::array<int, 7> kNatural = {9, 11, 0, 2, 4, 5, 7};  // A..G
  const char letter = text[0];
  if (letter < 'A' || letter > 'G') return std::nullopt;
  int pc = kNatural[static_cast<std::size_t>(letter - 'A')];
  for (char acc : text.substr(1)) {
    if (acc == '#') {
      ++pc;
    } else if (acc == 'b') {
      --pc;
    } else {
      return std::nullopt;
    }
  }
  return PitchClass(pc).value();
}

[[noreturn]] void malformed(std::string_view text) {
  throw Error(ErrorCode::kMalformedLabel, "malformed chord label '" + std::string(text) + "'");
}

[[noreturn]] void out_of_vocabulary(std::string_view text) {
  throw Error(ErrorCode::kOutOfVocabulary,
              "chord label '" + std::string(text) + "' is outside the SeventhsBass vocabulary");
}

ChordLabel parse_strict(std::string_view text) {
  if (text == "N") return ChordLabel::no_chord();
  if (text == "X") out_of_vocabulary(text);

  std::string_view body = text;
  std::string_view bass;
  if (auto slash = body.find('/'); slash != std::string_view::npos) {
    bass = body.substr(slash + 1);
    body = body.substr(0, slash);
    if (bass.empty()) malformed(text);
  }
  std::string_view root_text = body;
  std::string_view quality_text = "maj";  // Harte shorthand: bare root is major
  if (auto colon = body.find(':'); colon != std::string_view::npos) {
    root_text = body.substr(0, colon);
    quality_text = body.substr(colon + 1);
  }
  const auto root = parse_root(root_text);
  if (!root) malformed(text);

  if (quality_text.find('(') != std::string_view::npos) out_of_vocabulary(text);
  const auto kind = parse_kind(quality_text);
  if (!kind) {
    if (std::find(kForeignQualities.begin(), kForeignQualities.end(), quality_text) !=
        kForeignQualities.end()) {
      out_of_vocabulary(text);
    }
    malformed(text);
  }

  int bass_interval = 0;
  if (!bass.empty()) {
    const auto interval = degree_interval(bass);
    if (!interval) {
      if (std::find(kForeignDegrees.begin(), kForeignDegrees.end(), bass) !=
          kForeignDegrees.end()) {
        out_of_vocabulary(text);
      }
      malformed(text);
    }
    const auto intervals = chord_intervals(*kind);
    if (std::find(intervals.begin(), intervals.end(), *interval) == intervals.end()) {
      out_of_vocabulary(text);
    }
    bass_interval = *interval;
  }
  return ChordLabel(PitchClass(*root), ChordQuality{*kind, bass_interval});
}

}  // namespace

std::vector<int> chord_intervals(ChordKind kind) {
  switch (kind) {
    case ChordKind::kMaj: return {0, 4, 7};
    case ChordKind::kMin: return {0, 3, 7};
    case ChordKind::kMaj7: return {0, 4, 7, 11};
    case ChordKind::kDom7: return {0, 4, 7, 10};
    case ChordKind::kMin7: return {0, 3, 7, 10};
  }
  return {};
}

const std::array<ChordQuality, kNumQualities>& all_qualities() {
  static const std::array<ChordQuality, kNumQualities> qualities = [] {
    std::array<ChordQuality, kNumQualities> out{};
    std::size_t i = 0;
    for (ChordKind kind : {ChordKind::kMaj, ChordKind::kMin, ChordKind::kMaj7, ChordKind::kDom7,
                           ChordKind::kMin7}) {
      for (int interval : chord_intervals(kind)) out[i++] = ChordQuality{kind, interval};
    }
    return out;
  }();
  return qualities;
}

int quality_index(const ChordQuality& q) {
  const auto& all = all_qualities();
  const auto it = std::find(all.begin(), all.end(), q);
  if (it == all.end()) {
    throw Error(ErrorCode::kOutOfVocabulary, "invalid (kind, bass) pair");
  }
  return static_cast<int>(it - all.begin());
}

std::string quality_name(const ChordQuality& q) {
  std::string name = kind_name(q.kind);
  if (q.bass_interval != 0) {
    name += '/';
    name += interval_degree(q.bass_interval);
  }
  return name;
}

ChordLabel::ChordLabel(PitchClass root, ChordQuality quality) : chord_(Chord{root, quality}) {
  quality_index(quality);  // validates the pair
}

PitchClass ChordLabel::root() const {
  if (!chord_) throw Error(ErrorCode::kInvalidArgument, "NoChord has no root");
  return chord_->root;
}

const ChordQuality& ChordLabel::quality() const {
  if (!chord_) throw Error(ErrorCode::kInvalidArgument, "NoChord has no quality");
  return chord_->quality;
}

ChordLabel parse_label(std::string_view text, LabelParsing mode) {
  if (mode == LabelParsing::kStrict) return parse_strict(text);
  try {
    return parse_strict(text);
  } catch (const Error&) {
    return ChordLabel::no_chord();
  }
}

std::string print_label(const ChordLabel& label) {
  if (label.is_no_chord()) return "N";
  return std::string(kRootNames[static_cast<std::size_t>(label.root().value())]) + ":" +
         quality_name(label.quality());
}

int to_state_index(const ChordLabel& label) {
  if (label.is_no_chord()) return kNoChordState;
  return label.root().value() * kNumQualities + quality_index(label.quality());
}

ChordLabel from_state_index(int index) {
  if (index < 0 || index >= kNumChordStates) {
    throw Error(ErrorCode::kInvalidArgument, "state index out of range: " + std::to_string(index));
  }
  if (index == kNoChordState) return ChordLabel::no_chord();
  return ChordLabel(PitchClass(index / kNumQualities),
                    all_qualities()[static_cast<std::size_t>(index % kNumQualities)]);
}

ChordTemplate template_of(const ChordLabel& label) {
  if (label.is_no_chord()) return {};
  ChordTemplate t;
  for (int interval : chord_intervals(label.quality().kind)) {
    t.pitch_classes.push_back(label.root() + interval);
  }
  std::sort(t.pitch_classes.begin(), t.pitch_classes.end());
  t.bass = label.root() + label.quality().bass_interval;
  return t;
}

ChordLabel transpose_label(const ChordLabel& label, int semitones) {
  if (label.is_no_chord()) return label;
  return ChordLabel(label.root() + semitones, label.quality());
}

std::string chord_type_name(const ChordLabel& label) {
  return label.is_no_chord() ? "N" : quality_name(label.quality());
}

}  // namespace lvace
