#include "neurex/error.hpp"

namespace neurex {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kUnsupportedDtype: return "unsupported-dtype";
    case ErrorCode::kInvalidShape: return "invalid-shape";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kMissingRole: return "missing-role";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kZeroNorm: return "zero-norm";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kParse: return "parse";
  }
  return "unknown";
}

}  // namespace neurex
