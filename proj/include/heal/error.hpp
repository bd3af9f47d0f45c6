#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace heal {

enum class ErrorCode {
  InvalidArgument,
  MissingField,
  ZeroLength,
  LengthMismatch,
  TooShort,
  Degenerate,
  ZeroVariance,
  OutOfRange,
  NonFiniteValue,
  EmptyDataset,
  AllSkipped,
  ParseError,
  DuplicateHypothesisId,
  DuplicatePromptId,
  IoError,
  EmptyInput,
  UnknownKey,
  ConflictingValue,
  UnknownPair,
  UnknownDimension,
  UnterminatedSequence,
  TokenOutOfRange,
  MissingRewardEntry,
  DegenerateProbability,
  NonFiniteLoss,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::ZeroLength: return "ZeroLength";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::AllSkipped: return "AllSkipped";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateHypothesisId: return "DuplicateHypothesisId";
    case ErrorCode::DuplicatePromptId: return "DuplicatePromptId";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::ConflictingValue: return "ConflictingValue";
    case ErrorCode::UnknownPair: return "UnknownPair";
    case ErrorCode::UnknownDimension: return "UnknownDimension";
    case ErrorCode::UnterminatedSequence: return "UnterminatedSequence";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::MissingRewardEntry: return "MissingRewardEntry";
    case ErrorCode::DegenerateProbability: return "DegenerateProbability";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

// Base of every error thrown by the library. The code is stable and is what
// the command-line tool maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Positioned error from one of the JSON Lines readers. line is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : Error(ErrorCode::ParseError,
              "line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_(line),
        field_(std::move(field)) {}

  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class NonFiniteLossError : public Error {
 public:
  explicit NonFiniteLossError(std::size_t step)
      : Error(ErrorCode::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step)),
        step_(step) {}

  [[nodiscard]] std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Raised when no prompt of a dataset produced a value for a metric. Carries
// the skip-reason histogram so callers can report why.
class AllSkippedError : public Error {
 public:
  AllSkippedError(std::string metric, std::map<std::string, std::size_t> reasons)
      : Error(ErrorCode::AllSkipped, "every prompt was skipped for " + metric),
        metric_(std::move(metric)),
        reasons_(std::move(reasons)) {}

  [[nodiscard]] const std::string& metric() const noexcept { return metric_; }
  [[nodiscard]] const std::map<std::string, std::size_t>& reasons() const noexcept {
    return reasons_;
  }

 private:
  std::string metric_;
  std::map<std::string, std::size_t> reasons_;
};

}  // namespace heal
