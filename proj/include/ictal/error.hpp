#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ictal {

// Every module error carries one of these codes. The CLI prints the code name
// verbatim so callers can match on it.
enum class ErrorCode {
  TruncatedFile,
  MalformedField,
  DegenerateScale,
  FieldOverflow,
  ValueOutOfPhysicalRange,
  NegativeDuration,
  UnparsableLine,
  EmptySignal,
  InvalidBand,
  TooFewChannels,
  AllZeroData,
  NoSeizureFile,
  ShapeMismatch,
  UnfittedBatchNorm,
  AlreadyFolded,
  SaturationOverflow,
  SingleClass,
  DivergedLoss,
  EmptyRetrainSet,
  NoCalibrationData,
  InvalidConfig,
  IoError,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::MalformedField: return "MalformedField";
    case ErrorCode::DegenerateScale: return "DegenerateScale";
    case ErrorCode::FieldOverflow: return "FieldOverflow";
    case ErrorCode::ValueOutOfPhysicalRange: return "ValueOutOfPhysicalRange";
    case ErrorCode::NegativeDuration: return "NegativeDuration";
    case ErrorCode::UnparsableLine: return "UnparsableLine";
    case ErrorCode::EmptySignal: return "EmptySignal";
    case ErrorCode::InvalidBand: return "InvalidBand";
    case ErrorCode::TooFewChannels: return "TooFewChannels";
    case ErrorCode::AllZeroData: return "AllZeroData";
    case ErrorCode::NoSeizureFile: return "NoSeizureFile";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnfittedBatchNorm: return "UnfittedBatchNorm";
    case ErrorCode::AlreadyFolded: return "AlreadyFolded";
    case ErrorCode::SaturationOverflow: return "SaturationOverflow";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyRetrainSet: return "EmptyRetrainSet";
    case ErrorCode::NoCalibrationData: return "NoCalibrationData";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(to_string(code)) + ": " + what);
}

}  // namespace ictal
