#include "solarmap/error.hpp"

namespace solarmap {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kRange: return "range";
    case ErrorCode::kSizeMismatch: return "size_mismatch";
    case ErrorCode::kSingular: return "singular";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDuplicate: return "duplicate";
    case ErrorCode::kGeometry: return "geometry";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kState: return "state";
    case ErrorCode::kNumeric: return "numeric";
  }
  return "unknown";
}

}  // namespace solarmap
