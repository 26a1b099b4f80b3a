#include "nepgpt/error.hpp"

namespace nepgpt {

ErrorClass error_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownSubcommand:
    case ErrorCode::kConflictingFlags:
    case ErrorCode::kConfigInvalid:
    case ErrorCode::kUnknownConfigKey:
      return ErrorClass::kUsage;
    case ErrorCode::kCorpusTooSmall:
    case ErrorCode::kInvalidId:
    case ErrorCode::kCorruptFile:
    case ErrorCode::kCorruptShard:
    case ErrorCode::kFormatVersionMismatch:
    case ErrorCode::kSplitEmpty:
    case ErrorCode::kTokenOutOfRange:
    case ErrorCode::kVocabMismatch:
    case ErrorCode::kConfigMismatch:
    case ErrorCode::kPromptTooLong:
      return ErrorClass::kData;
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kNotScalarLoss:
    case ErrorCode::kNonFiniteValue:
    case ErrorCode::kNonFiniteGradient:
    case ErrorCode::kStepOutOfRange:
      return ErrorClass::kNumeric;
    case ErrorCode::kIoFailure:
      return ErrorClass::kIo;
  }
  return ErrorClass::kData;
}

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::kConflictingFlags: return "ConflictingFlags";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kUnknownConfigKey: return "UnknownConfigKey";
    case ErrorCode::kCorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::kInvalidId: return "InvalidId";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kCorruptShard: return "CorruptShard";
    case ErrorCode::kFormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::kSplitEmpty: return "SplitEmpty";
    case ErrorCode::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::kVocabMismatch: return "VocabMismatch";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kPromptTooLong: return "PromptTooLong";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNotScalarLoss: return "NotScalarLoss";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kStepOutOfRange: return "StepOutOfRange";
    case ErrorCode::kIoFailure: return "IoFailure";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

CorruptShardError::CorruptShardError(std::uint64_t byte_offset,
                                     const std::string& message)
    : Error(ErrorCode::kCorruptShard,
            message + " (byte offset " + std::to_string(byte_offset) + ")"),
      byte_offset_(byte_offset) {}

}  // namespace nepgpt
