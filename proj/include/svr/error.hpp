#pragma once

#include <stdexcept>
#include <string>

namespace svr {

enum class ErrorCode {
  InvalidArgument,
  BehindCamera,
  InsufficientData,
  InvalidStream,
  DegenerateGeometry,
  NoOverlap,
  UnobservableRotation,
  MetricUndefined,
  UnsupportedShape,
  InsufficientMatches,
  DegenerateConfiguration,
  ShapeMismatch,
  InvalidMask,
  InvalidPose,
  ScenarioAbort,
  UnsupportedVersion,
  CorruptRecord,
  Config,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::BehindCamera: return "behind-camera";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::InvalidStream: return "invalid-stream";
    case ErrorCode::DegenerateGeometry: return "degenerate-geometry";
    case ErrorCode::NoOverlap: return "no-overlap";
    case ErrorCode::UnobservableRotation: return "unobservable-rotation";
    case ErrorCode::MetricUndefined: return "metric-undefined";
    case ErrorCode::UnsupportedShape: return "unsupported-shape";
    case ErrorCode::InsufficientMatches: return "insufficient-matches";
    case ErrorCode::DegenerateConfiguration: return "degenerate-configuration";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::InvalidMask: return "invalid-mask";
    case ErrorCode::InvalidPose: return "invalid-pose";
    case ErrorCode::ScenarioAbort: return "scenario-abort";
    case ErrorCode::UnsupportedVersion: return "unsupported-version";
    case ErrorCode::CorruptRecord: return "corrupt-record";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a stable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

/// Raised when a dataset file ends early; carries the index of the last frame
/// that was read completely (-1 when none was).
class CorruptRecordError : public Error {
 public:
  CorruptRecordError(const std::string& what, long last_valid_frame)
      : Error(ErrorCode::CorruptRecord,
              what + " (last complete frame " + std::to_string(last_valid_frame) + ")"),
        last_valid_frame_(last_valid_frame) {}

  [[nodiscard]] long last_valid_frame() const noexcept { return last_valid_frame_; }

 private:
  long last_valid_frame_;
};

}  // namespace svr
