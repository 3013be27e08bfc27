#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vmae {

enum class ErrorCode {
  kNonDivisibleDimensions,
  kIndexOutOfRange,
  kInvalidAnnotation,
  kInvalidConfig,
  kShapeMismatch,
  kPlanMismatch,
  kEmptyMaskSet,
  kZeroVector,
  kEmptyBatch,
  kNonFinite,
  kTeacherUnavailable,
  kFileUnreadable,
  kEmptyCorpus,
  kParseError,
  kMissingImage,
  kCheckpointFormat,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonDivisibleDimensions: return "NonDivisibleDimensions";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kInvalidAnnotation: return "InvalidAnnotation";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kPlanMismatch: return "PlanMismatch";
    case ErrorCode::kEmptyMaskSet: return "EmptyMaskSet";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kTeacherUnavailable: return "TeacherUnavailable";
    case ErrorCode::kFileUnreadable: return "FileUnreadable";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kMissingImage: return "MissingImage";
    case ErrorCode::kCheckpointFormat: return "CheckpointFormat";
  }
  return "Unknown";
}

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vmae
