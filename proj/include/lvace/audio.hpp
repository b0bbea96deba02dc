#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace lvace {

constexpr double kAnalysisSampleRate = 11025.0;

struct AudioBuffer {
  std::vector<double> samples;
  double sample_rate = kAnalysisSampleRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Reads a RIFF/WAVE file (PCM16 or float32, any channel count) and averages
// the channels. No resampling.
AudioBuffer read_wav(const std::filesystem::path& path);

// Writes mono float32 WAVE.
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

// Windowed-sinc polyphase resampler, 64 Kaiser-windowed taps per phase at the
// lower of the two rates. Returns the input unchanged when rates match.
AudioBuffer resample(const AudioBuffer& audio, double target_rate);

AudioBuffer load_and_resample(const std::filesystem::path& path,
                              double target_rate = kAnalysisSampleRate);

}  // namespace lvace
