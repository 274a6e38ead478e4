#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lostgan {

enum class ErrorCode {
  kEmptyLayout,
  kBoxOutOfLattice,
  kUnknownLabel,
  kTooManyObjects,
  kTooFewObjects,
  kInvalidLattice,
  kStyleMismatch,
  kMalformedDocument,
  kSchemaVersionMismatch,
  kMalformedAnnotation,
  kMissingImage,
  kDimensionMismatch,
  kShapeMismatch,
  kDegenerateBox,
  kIndexOutOfRange,
  kEmptyObjectSet,
  kNonFiniteLoss,
  kCheckpointIOError,
  kDegenerateInput,
  kNonConvergedSqrt,
  kEmbedderFailure,
  kInsufficientData,
  kInvalidArgument,
};

// Stable identifier used in error bodies and logs, e.g. "EmptyLayout".
std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace lostgan
