#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace solarmap {

/// Machine-readable failure categories. The CLI maps these onto exit codes
/// and the review service onto HTTP statuses.
enum class ErrorCode {
  kInvalidArgument,
  kFormat,
  kRange,
  kSizeMismatch,
  kSingular,
  kIo,
  kDuplicate,
  kGeometry,
  kNotFound,
  kConflict,
  kState,
  kNumeric,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace solarmap
