#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace selip {

enum class ErrorCode {
  UnknownModality,
  UnknownOrientation,
  OutOfVocabularySite,
  OutOfVocabularyAppearance,
  InvalidVocabulary,
  InvalidStyle,
  ParseFailure,
  LengthMismatch,
  EmptyClause,
  BatchTooSmall,
  ZeroNormRow,
  ShapeMismatch,
  InvalidConfig,
  UnsupportedPrimitive,
  NonFiniteValue,
  OutOfRangeIteration,
  OutOfRangeEpoch,
  EmptyInput,
  InsufficientDistinctTexts,
  EmptyTokenization,
  NonFiniteLoss,
  IoFailure,
  VersionMismatch,
  ChecksumMismatch,
  DimensionMismatch,
  KOutOfRange,
  UnknownCommand,
  ConfigError,
};

std::string_view error_code_name(ErrorCode code);

// Every recoverable failure in the library is reported through this type. The
// optional `subject` names the offending field, row, key or path.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string subject = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorCode code_;
  std::string subject_;
};

}  // namespace selip
