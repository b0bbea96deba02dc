#include "lvace/common.hpp"

namespace lvace {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedLabel: return "MalformedLabel";
    case ErrorCode::kOutOfVocabulary: return "OutOfVocabulary";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kInvalidParameter: return "InvalidParameter";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kMaxIterations: return "MaxIterations";
    case ErrorCode::kInvalidAnnotation: return "InvalidAnnotation";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kOverlap: return "OverlapError";
    case ErrorCode::kEmptyTruth: return "EmptyTruth";
    case ErrorCode::kCoverageMismatch: return "CoverageMismatch";
    case ErrorCode::kMissingFeatures: return "MissingFeatures";
    case ErrorCode::kMissingTrack: return "MissingTrack";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace lvace
