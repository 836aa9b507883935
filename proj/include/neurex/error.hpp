#pragma once

#include <stdexcept>
#include <string>

namespace neurex {

enum class ErrorCode {
  kIo,
  kBadMagic,
  kTruncated,
  kUnsupportedDtype,
  kInvalidShape,
  kShapeMismatch,
  kOutOfRange,
  kMissingRole,
  kInvalidArgument,
  kZeroNorm,
  kDegenerate,
  kParse,
};

const char* to_string(ErrorCode code);

// Every failure caused by bad input (files, shapes, arguments) is reported
// through this type. The CLI maps it to exit code 1; anything else is an
// internal error.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace neurex
