#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qanet {

enum class ErrorCode {
  kDimensionMismatch,
  kAxisOutOfRange,
  kEvenKernel,
  kOddDimension,
  kNotScalar,
  kDetachedTensor,
  kIdOutOfRange,
  kMalformedJson,
  kMissingField,
  kUnalignableAnswer,
  kBadVectorLine,
  kEmptyDataset,
  kGoldIndexMasked,
  kEmptyDistribution,
  kMissingGradient,
  kMissingPrediction,
  kTranslatorUnavailable,
  kTranslatorProtocolError,
  kEmptyWeightedPool,
  kInvalidArgument,
  kIoError,
  kCheckpointMismatch,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kAxisOutOfRange: return "AxisOutOfRange";
    case ErrorCode::kEvenKernel: return "EvenKernel";
    case ErrorCode::kOddDimension: return "OddDimension";
    case ErrorCode::kNotScalar: return "NotScalar";
    case ErrorCode::kDetachedTensor: return "DetachedTensor";
    case ErrorCode::kIdOutOfRange: return "IdOutOfRange";
    case ErrorCode::kMalformedJson: return "MalformedJson";
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kUnalignableAnswer: return "UnalignableAnswer";
    case ErrorCode::kBadVectorLine: return "BadVectorLine";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kGoldIndexMasked: return "GoldIndexMasked";
    case ErrorCode::kEmptyDistribution: return "EmptyDistribution";
    case ErrorCode::kMissingGradient: return "MissingGradient";
    case ErrorCode::kMissingPrediction: return "MissingPrediction";
    case ErrorCode::kTranslatorUnavailable: return "TranslatorUnavailable";
    case ErrorCode::kTranslatorProtocolError: return "TranslatorProtocolError";
    case ErrorCode::kEmptyWeightedPool: return "EmptyWeightedPool";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kCheckpointMismatch: return "CheckpointMismatch";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace qanet
