#pragma once

#include <stdexcept>
#include <string>

namespace stdb {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  DomainError,
  SingularSchedule,
  IllConditioned,
  NotPSD,
  TooLarge,
  EigenFail,
  MissingPropagator,
  NearPinned,
  DivergedPath,
  TrainingDiverged,
  ExtractFail,
  InfeasibleFamily,
  UnknownDataset,
  Io,
};

const char* to_string(ErrorCode code) noexcept;

// Validation errors map to CLI exit code 2, everything else to 3.
bool is_validation_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace stdb
