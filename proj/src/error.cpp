#include "matir/error.hpp"

namespace matir {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kMalformedMask: return "malformed-mask";
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kEmptyMask: return "empty-mask";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kSizeMismatch: return "size-mismatch";
    case ErrorKind::kLoad: return "load";
    case ErrorKind::kInvalidQuery: return "invalid-query";
    case ErrorKind::kInvalidLogit: return "invalid-logit";
    case ErrorKind::kNoRegion: return "no-region";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kBackendUnavailable: return "backend-unavailable";
    case ErrorKind::kNoEvaluableQueries: return "no-evaluable-queries";
  }
  return "unknown";
}

}  // namespace matir
