#pragma once

// Internal JSON helpers shared by the NDJSON readers and writers.

#include <string>

#include <json.hpp>

#include "solarmap/error.hpp"
#include "solarmap/vector.hpp"

namespace solarmap::detail {

using nlohmann::json;

inline json point_to_json(WorldPoint p) { return json::array({p.x, p.y}); }

inline WorldPoint point_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw Error(ErrorCode::kFormat, "expected a [x, y] coordinate pair");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

inline json ring_to_json(const Ring& ring) {
  json out = json::array();
  for (const auto& p : ring) out.push_back(point_to_json(p));
  return out;
}

inline Ring ring_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kFormat, "expected an array of coordinates");
  Ring ring;
  ring.reserve(j.size());
  for (const auto& p : j) ring.push_back(point_from_json(p));
  return ring;
}

inline json holes_to_json(const std::vector<Ring>& holes) {
  json out = json::array();
  for (const auto& h : holes) out.push_back(ring_to_json(h));
  return out;
}

inline std::vector<Ring> holes_from_json(const json& j) {
  std::vector<Ring> holes;
  if (j.is_null()) return holes;
  if (!j.is_array()) throw Error(ErrorCode::kFormat, "'holes' must be an array of rings");
  for (const auto& h : j) holes.push_back(ring_from_json(h));
  return holes;
}

inline std::string id_from_json(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw Error(ErrorCode::kFormat, "'id' must be a string or integer");
}

}  // namespace solarmap::detail
