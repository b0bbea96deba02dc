#pragma once

// SeventhsBass chord vocabulary: 12 roots x 18 (kind, bass) qualities plus
// no-chord, giving 217 classification states.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lvace {

constexpr int kNumRoots = 12;
constexpr int kNumQualities = 18;
constexpr int kNumChordStates = kNumRoots * kNumQualities + 1;  // 217
constexpr int kNoChordState = kNumChordStates - 1;              // 216

class PitchClass {
 public:
  constexpr PitchClass() = default;
  constexpr explicit PitchClass(int semitones) : value_(((semitones % 12) + 12) % 12) {}

  constexpr int value() const { return value_; }
  constexpr PitchClass operator+(int k) const { return PitchClass(value_ + k); }
  constexpr PitchClass operator-(int k) const { return PitchClass(value_ - k); }
  constexpr bool operator==(const PitchClass&) const = default;
  constexpr auto operator<=>(const PitchClass&) const = default;

 private:
  int value_ = 0;
};

enum class ChordKind { kMaj, kMin, kMaj7, kDom7, kMin7 };

// Intervals (semitones above the root) of each kind, bass-candidates in order.
std::vector<int> chord_intervals(ChordKind kind);

struct ChordQuality {
  ChordKind kind = ChordKind::kMaj;
  int bass_interval = 0;

  bool operator==(const ChordQuality&) const = default;
};

// The 18 qualities in vocabulary listing order: maj, maj/3, maj/5, min,
// min/b3, min/5, maj7, maj7/3, maj7/5, maj7/7, 7, 7/3, 7/5, 7/b7, min7,
// min7/b3, min7/5, min7/b7.
const std::array<ChordQuality, kNumQualities>& all_qualities();
int quality_index(const ChordQuality& q);
// "maj", "maj/3", "7/b7", ...
std::string quality_name(const ChordQuality& q);

class ChordLabel {
 public:
  // NoChord.
  ChordLabel() = default;
  ChordLabel(PitchClass root, ChordQuality quality);

  static ChordLabel no_chord() { return {}; }

  bool is_no_chord() const { return !chord_; }
  PitchClass root() const;
  const ChordQuality& quality() const;

  bool operator==(const ChordLabel&) const = default;

 private:
  struct Chord {
    PitchClass root;
    ChordQuality quality;
    bool operator==(const Chord&) const = default;
  };
  std::optional<Chord> chord_;
};

struct ChordTemplate {
  std::vector<PitchClass> pitch_classes;  // sorted ascending, empty for NoChord
  PitchClass bass;

  bool operator==(const ChordTemplate&) const = default;
};

enum class LabelParsing { kStrict, kLenient };

// Parses `<ROOT>:<quality>(/<bass-degree>)` or `N`. Strict mode throws
// OutOfVocabulary for well-formed labels outside the vocabulary (dim, sus4,
// 9, ...) and MalformedLabel otherwise; lenient mode returns NoChord for both.
ChordLabel parse_label(std::string_view text, LabelParsing mode = LabelParsing::kStrict);
std::string print_label(const ChordLabel& label);

int to_state_index(const ChordLabel& label);
ChordLabel from_state_index(int index);

ChordTemplate template_of(const ChordLabel& label);
ChordLabel transpose_label(const ChordLabel& label, int semitones);

// Label of the chord type ignoring root: quality_name or "N".
std::string chord_type_name(const ChordLabel& label);

}  // namespace lvace
