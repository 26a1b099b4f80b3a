#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nepgpt {

// Every failure the toolkit reports carries one of these codes. The CLI maps
// the code's class onto its exit status.
enum class ErrorCode {
  // usage
  kUnknownSubcommand,
  kConflictingFlags,
  kConfigInvalid,
  kUnknownConfigKey,
  // data
  kCorpusTooSmall,
  kInvalidId,
  kCorruptFile,
  kCorruptShard,
  kFormatVersionMismatch,
  kSplitEmpty,
  kTokenOutOfRange,
  kVocabMismatch,
  kConfigMismatch,
  kPromptTooLong,
  // numeric
  kShapeMismatch,
  kNotScalarLoss,
  kNonFiniteValue,
  kNonFiniteGradient,
  kStepOutOfRange,
  // io
  kIoFailure,
};

enum class ErrorClass : int {
  kUsage = 1,
  kData = 2,
  kNumeric = 3,
  kIo = 4,
};

ErrorClass error_class(ErrorCode code);
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }
  ErrorClass error_class() const { return nepgpt::error_class(code_); }

 private:
  ErrorCode code_;
};

// Raised by shard verification; remembers where the first violation sits.
class CorruptShardError : public Error {
 public:
  CorruptShardError(std::uint64_t byte_offset, const std::string& message);

  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

}  // namespace nepgpt
