#pragma once

// JSON encodings shared by the report writers and the review service.

#include <optional>

#include <json.hpp>

#include "solarmap/metrics.hpp"

namespace solarmap::detail {

using nlohmann::json;

inline json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

json pixel_score_json(const PixelScore& s);
json match_result_json(const MatchResult& m);
json counts_json(const DetectionCounts& c);
json prf_json(const PRF& p);

}  // namespace solarmap::detail
