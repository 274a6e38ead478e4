#include "lostgan/error.hpp"

namespace lostgan {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kEmptyLayout: return "EmptyLayout";
    case ErrorCode::kBoxOutOfLattice: return "BoxOutOfLattice";
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kTooManyObjects: return "TooManyObjects";
    case ErrorCode::kTooFewObjects: return "TooFewObjects";
    case ErrorCode::kInvalidLattice: return "InvalidLattice";
    case ErrorCode::kStyleMismatch: return "StyleMismatch";
    case ErrorCode::kMalformedDocument: return "MalformedDocument";
    case ErrorCode::kSchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::kMalformedAnnotation: return "MalformedAnnotation";
    case ErrorCode::kMissingImage: return "MissingImage";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDegenerateBox: return "DegenerateBox";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kEmptyObjectSet: return "EmptyObjectSet";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kCheckpointIOError: return "CheckpointIOError";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kNonConvergedSqrt: return "NonConvergedSqrt";
    case ErrorCode::kEmbedderFailure: return "EmbedderFailure";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace lostgan
