#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace annoforge {

enum class ErrorCode {
  DegeneratePolygon,
  GridMismatch,
  NotConvex,
  SingularTransform,
  OutOfRange,
  OutOfBounds,
  UnknownFolder,
  UnknownImage,
  UnknownLabel,
  UnknownNode,
  UnknownAnnotation,
  UnknownToken,
  UnknownModel,
  UnknownJob,
  UnknownClass,
  IllegalTransition,
  IllegalState,
  ValidationError,
  LeaseExpired,
  LockExpired,
  InsufficientData,
  EmptySelection,
  NoAcceptedAnnotations,
  UnsupportedFormat,
  IoFailure,
  SchemaViolation,
  DuplicateModel,
  MissingConfigKey,
  NoPredictions,
  NoData,
  MixedImages,
  ConfigError,
  DataRootCorrupt,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegeneratePolygon: return "DegeneratePolygon";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::NotConvex: return "NotConvex";
    case ErrorCode::SingularTransform: return "SingularTransform";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::UnknownFolder: return "UnknownFolder";
    case ErrorCode::UnknownImage: return "UnknownImage";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::UnknownAnnotation: return "UnknownAnnotation";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::UnknownJob: return "UnknownJob";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::IllegalState: return "IllegalState";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::LeaseExpired: return "LeaseExpired";
    case ErrorCode::LockExpired: return "LockExpired";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::NoAcceptedAnnotations: return "NoAcceptedAnnotations";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::DuplicateModel: return "DuplicateModel";
    case ErrorCode::MissingConfigKey: return "MissingConfigKey";
    case ErrorCode::NoPredictions: return "NoPredictions";
    case ErrorCode::NoData: return "NoData";
    case ErrorCode::MixedImages: return "MixedImages";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DataRootCorrupt: return "DataRootCorrupt";
  }
  return "Unknown";
}

// Every failure surfaced by the library carries one of the codes above so the
// HTTP layer can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

}  // namespace annoforge
