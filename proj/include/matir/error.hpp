#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace matir {

enum class ErrorKind {
  kMalformedMask,
  kInvalidInput,
  kEmptyMask,
  kValidation,
  kSizeMismatch,
  kLoad,
  kInvalidQuery,
  kInvalidLogit,
  kNoRegion,
  kDimensionMismatch,
  kBackendUnavailable,
  kNoEvaluableQueries,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the engine; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace matir
