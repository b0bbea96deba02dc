#include "lvace/audio.hpp"

#include "lvace/common.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

namespace lvace {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

double kaiser(double x, double beta) {
  if (std::abs(x) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kUnsupportedFormat, path.string() + " is not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw Error(ErrorCode::kUnsupportedFormat, "truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible && avail >= 26) format = read_u16(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0 || data == nullptr) {
    throw Error(ErrorCode::kUnsupportedFormat, path.string() + ": missing fmt or data chunk");
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw Error(ErrorCode::kUnsupportedFormat,
                path.string() + ": only PCM16 and float32 WAVE are supported");
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data_size / (bytes_per_sample * channels);
  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double sum = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (f * channels + c) * bytes_per_sample;
      if (pcm16) {
        sum += static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        const std::uint32_t raw = read_u32(p);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        sum += v;
      }
    }
    out.samples[f] = sum / channels;
  }
  if (out.samples.empty()) throw Error(ErrorCode::kUnsupportedFormat, path.string() + ": no audio");
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
  std::vector<unsigned char> out;
  out.reserve(44 + 4 * n);
  put_tag(out, "RIFF");
  put_u32(out, 36 + 4 * n);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatFloat);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  put_tag(out, "data");
  put_u32(out, 4 * n);
  for (double s : audio.samples) {
    const auto v = static_cast<float>(s);
    std::uint32_t raw;
    std::memcpy(&raw, &v, sizeof raw);
    put_u32(out, raw);
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

AudioBuffer resample(const AudioBuffer& audio, double target_rate) {
  const auto in_rate = static_cast<std::int64_t>(std::llround(audio.sample_rate));
  const auto out_rate = static_cast<std::int64_t>(std::llround(target_rate));
  if (in_rate <= 0 || out_rate <= 0) {
    throw Error(ErrorCode::kInvalidParameter, "sample rates must be positive");
  }
  if (in_rate == out_rate) return audio;

  const std::int64_t g = std::gcd(in_rate, out_rate);
  const std::int64_t up = out_rate / g;    // phases
  const std::int64_t down = in_rate / g;
  const double ratio = static_cast<double>(out_rate) / static_cast<double>(in_rate);

  // 64 taps at the lower rate, expressed in input samples.
  constexpr int kTapsAtLowRate = 64;
  constexpr double kBeta = 8.0;
  constexpr double kRolloff = 0.95;
  const double stretch = std::max(1.0, 1.0 / ratio);
  const int half = static_cast<int>(std::ceil(kTapsAtLowRate / 2 * stretch));
  const int taps = 2 * half;
  const double cutoff = 0.5 * std::min(1.0, ratio) * kRolloff;  // cycles per input sample

  // table[phase][j] weights input sample base - half + 1 + j.
  std::vector<double> table(static_cast<std::size_t>(up * taps));
  for (std::int64_t phase = 0; phase < up; ++phase) {
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    for (int j = 0; j < taps; ++j) {
      const double delta = frac - static_cast<double>(j - half + 1);
      table[static_cast<std::size_t>(phase * taps + j)] =
          2.0 * cutoff * sinc(2.0 * cutoff * delta) * kaiser(delta / half, kBeta);
    }
  }

  const auto in_len = static_cast<std::int64_t>(audio.samples.size());
  const auto out_len = static_cast<std::int64_t>(
      std::llround(static_cast<double>(in_len) * static_cast<double>(up) / static_cast<double>(down)));
  AudioBuffer out;
  out.sample_rate = static_cast<double>(out_rate);
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t n = 0; n < out_len; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t base = pos / up;
    const std::int64_t phase = pos % up;
    const double* w = &table[static_cast<std::size_t>(phase * taps)];
    double acc = 0.0;
    for (int j = 0; j < taps; ++j) {
      const std::int64_t k = base - half + 1 + j;
      if (k >= 0 && k < in_len) acc += w[j] * audio.samples[static_cast<std::size_t>(k)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

AudioBuffer load_and_resample(const std::filesystem::path& path, double target_rate) {
  return resample(read_wav(path), target_rate);
}

}  // namespace lvace
