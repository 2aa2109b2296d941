#pragma once

#include <stdexcept>
#include <string>

namespace tacovc {

enum class ErrorCode {
  InvalidInput,
  InvalidConfig,
  SampleRateMismatch,
  ShapeError,
  AlignmentError,
  ConfigMismatch,
  CtcInfeasible,
  MissingFeature,
  MissingCheckpoint,
  IoError,
};

inline const char* errorCodeName(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::SampleRateMismatch: return "SampleRateMismatch";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::CtcInfeasible: return "CtcInfeasible";
    case ErrorCode::MissingFeature: return "MissingFeature";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}

  ErrorCode code() const { return code_; }
  const char* codeName() const { return errorCodeName(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) raise(code, msg);
}

}  // namespace tacovc
