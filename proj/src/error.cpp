#include "selip/error.hpp"

namespace selip {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownModality: return "UnknownModality";
    case ErrorCode::UnknownOrientation: return "UnknownOrientation";
    case ErrorCode::OutOfVocabularySite: return "OutOfVocabularySite";
    case ErrorCode::OutOfVocabularyAppearance: return "OutOfVocabularyAppearance";
    case ErrorCode::InvalidVocabulary: return "InvalidVocabulary";
    case ErrorCode::InvalidStyle: return "InvalidStyle";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyClause: return "EmptyClause";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnsupportedPrimitive: return "UnsupportedPrimitive";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::OutOfRangeIteration: return "OutOfRangeIteration";
    case ErrorCode::OutOfRangeEpoch: return "OutOfRangeEpoch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InsufficientDistinctTexts: return "InsufficientDistinctTexts";
    case ErrorCode::EmptyTokenization: return "EmptyTokenization";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::string subject)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code),
      subject_(std::move(subject)) {}

}  // namespace selip
