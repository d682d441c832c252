#include "stdb/errors.hpp"

namespace stdb {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::SingularSchedule: return "SingularSchedule";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::EigenFail: return "EigenFail";
    case ErrorCode::MissingPropagator: return "MissingPropagator";
    case ErrorCode::NearPinned: return "NearPinned";
    case ErrorCode::DivergedPath: return "DivergedPath";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::ExtractFail: return "ExtractFail";
    case ErrorCode::InfeasibleFamily: return "InfeasibleFamily";
    case ErrorCode::UnknownDataset: return "UnknownDataset";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

bool is_validation_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::DomainError:
    case ErrorCode::TooLarge:
    case ErrorCode::UnknownDataset:
    case ErrorCode::Io:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace stdb
