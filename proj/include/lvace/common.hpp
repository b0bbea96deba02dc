#pragma once

// Shared scalar/matrix aliases, the error type, and the seeded RNG used
// throughout the library.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace lvace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  kMalformedLabel = 1,
  kOutOfVocabulary,
  kIo,
  kUnsupportedFormat,
  kInvalidParameter,
  kDegenerateInput,
  kMaxIterations,
  kInvalidAnnotation,
  kShapeMismatch,
  kNonFiniteLoss,
  kParse,
  kOverlap,
  kEmptyTruth,
  kCoverageMismatch,
  kMissingFeatures,
  kMissingTrack,
  kInvalidArgument,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Thin wrapper so every stochastic component draws from the same engine type
// and tests can replay a stream by copying the object.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lvace
