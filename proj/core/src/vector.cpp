#include "solarmap/vector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "json_geometry.hpp"
#include "solarmap/error.hpp"
#include "solarmap/parallel.hpp"

namespace solarmap {

namespace {

using detail::json;

double cross(WorldPoint o, WorldPoint a, WorldPoint b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

bool within_box(WorldPoint a, WorldPoint b, WorldPoint p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

bool segments_intersect(WorldPoint a, WorldPoint b, WorldPoint c, WorldPoint d) {
  const int d1 = sign(cross(c, d, a));
  const int d2 = sign(cross(c, d, b));
  const int d3 = sign(cross(a, b, c));
  const int d4 = sign(cross(a, b, d));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && within_box(c, d, a)) return true;
  if (d2 == 0 && within_box(c, d, b)) return true;
  if (d3 == 0 && within_box(a, b, c)) return true;
  if (d4 == 0 && within_box(a, b, d)) return true;
  return false;
}

// Absolute tolerance for "on the boundary", scaled to coordinate magnitude.
double boundary_tolerance(WorldPoint a, WorldPoint b, WorldPoint p) {
  const double scale = std::max({1.0, std::abs(a.x), std::abs(a.y), std::abs(b.x),
                                 std::abs(b.y), std::abs(p.x), std::abs(p.y)});
  return 1e-12 * scale;
}

bool on_segment(WorldPoint a, WorldPoint b, WorldPoint p) {
  const double tol = boundary_tolerance(a, b, p);
  const double ex = b.x - a.x;
  const double ey = b.y - a.y;
  const double len2 = ex * ex + ey * ey;
  if (len2 == 0.0) return std::hypot(p.x - a.x, p.y - a.y) <= tol;
  double t = ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = a.x + t * ex;
  const double qy = a.y + t * ey;
  return std::hypot(p.x - qx, p.y - qy) <= tol;
}

bool on_ring(const Ring& ring, WorldPoint p) {
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (on_segment(ring[i], ring[(i + 1) % n], p)) return true;
  }
  return false;
}

bool crossing_parity(const Ring& ring, WorldPoint p) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const WorldPoint a = ring[i];
    const WorldPoint b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

void strip_closure(Ring& ring) {
  if (ring.size() >= 2 && ring.front() == ring.back()) ring.pop_back();
}

void validate_ring(const Ring& ring, const char* what) {
  if (ring.size() < 3) {
    throw Error(ErrorCode::kGeometry,
                std::string(what) + " ring needs at least 3 vertices, got " +
                    std::to_string(ring.size()));
  }
  if (ring.front() == ring.back()) {
    throw Error(ErrorCode::kGeometry,
                std::string(what) + " ring stores its closing vertex");
  }
  for (const auto& p : ring) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error(ErrorCode::kGeometry, std::string(what) + " ring has a non-finite vertex");
    }
  }
}

bool ring_self_intersects(const Ring& ring) {
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const WorldPoint a = ring[i];
    const WorldPoint b = ring[(i + 1) % n];
    if (a == b) return true;
    for (std::size_t j = i + 1; j < n; ++j) {
      const WorldPoint c = ring[j];
      const WorldPoint d = ring[(j + 1) % n];
      const bool adjacent_next = j == i + 1;
      const bool adjacent_wrap = i == 0 && j == n - 1;
      if (adjacent_next || adjacent_wrap) {
        // Adjacent edges share exactly one vertex; anything more means they
        // fold back over each other.
        const WorldPoint shared = adjacent_next ? b : a;
        const WorldPoint far_self = adjacent_next ? a : b;
        const WorldPoint far_other = adjacent_next ? d : c;
        if (cross(shared, far_self, far_other) == 0.0) {
          const double dot = (far_self.x - shared.x) * (far_other.x - shared.x) +
                             (far_self.y - shared.y) * (far_other.y - shared.y);
          if (dot > 0.0) return true;
        }
        continue;
      }
      if (segments_intersect(a, b, c, d)) return true;
    }
  }
  return false;
}

std::vector<json> read_ndjson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormat, path.string() + ":" + std::to_string(line_no) +
                                          ": malformed JSON: " + e.what());
    }
    if (!out.back().is_object()) {
      throw Error(ErrorCode::kFormat,
                  path.string() + ":" + std::to_string(line_no) + ": expected a JSON object");
    }
  }
  return out;
}

Polygon polygon_from_feature(const json& f) {
  if (!f.contains("exterior")) throw Error(ErrorCode::kFormat, "feature lacks 'exterior'");
  return make_polygon(detail::ring_from_json(f.at("exterior")),
                      detail::holes_from_json(f.value("holes", json())));
}

std::string kind_of(const json& f) {
  const auto it = f.find("kind");
  if (it == f.end()) return "array";
  if (!it->is_string()) throw Error(ErrorCode::kFormat, "'kind' must be a string");
  return it->get<std::string>();
}

template <typename Fn>
auto with_line_context(const std::filesystem::path& path, std::size_t index, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": feature " + std::to_string(index + 1) + ": " +
                              e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": feature " +
                                        std::to_string(index + 1) + ": " + e.what());
  }
}

void write_lines(const std::vector<json>& lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& j : lines) out << j.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace

double ring_signed_area(const Ring& ring) {
  const std::size_t n = ring.size();
  if (n < 3) return 0.0;
  // Relative to the first vertex, so projected coordinates far from the
  // origin do not cancel away the significant digits.
  const WorldPoint o = ring[0];
  double twice = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double ax = ring[i].x - o.x, ay = ring[i].y - o.y;
    const double bx = ring[i + 1].x - o.x, by = ring[i + 1].y - o.y;
    twice += ax * by - bx * ay;
  }
  return 0.5 * twice;
}

double polygon_area(const Polygon& poly) {
  double area = std::abs(ring_signed_area(poly.exterior));
  for (const auto& h : poly.holes) area -= std::abs(ring_signed_area(h));
  return area;
}

Polygon make_polygon(Ring exterior, std::vector<Ring> holes) {
  Polygon p{std::move(exterior), std::move(holes)};
  strip_closure(p.exterior);
  for (auto& h : p.holes) strip_closure(h);
  validate_polygon(p);
  return p;
}

void validate_polygon(const Polygon& poly) {
  validate_ring(poly.exterior, "exterior");
  for (const auto& h : poly.holes) validate_ring(h, "hole");
  if (ring_self_intersects(poly.exterior)) {
    throw Error(ErrorCode::kGeometry, "exterior ring is self-intersecting");
  }
}

bool point_in_polygon(WorldPoint p, const Polygon& poly) {
  if (on_ring(poly.exterior, p)) return true;
  for (const auto& h : poly.holes) {
    if (on_ring(h, p)) return true;
  }
  bool inside = crossing_parity(poly.exterior, p);
  for (const auto& h : poly.holes) {
    if (crossing_parity(h, p)) inside = !inside;
  }
  return inside;
}

Raster rasterize(std::span<const Polygon> polys, const GeoTransform& geo, int width,
                 int height, int workers) {
  if (!geo.invertible()) {
    throw Error(ErrorCode::kSingular, "rasterize: grid geotransform is singular");
  }
  Raster out(width, height, 1, DType::kU8, geo);
  if (width == 0 || height == 0 || polys.empty()) return out;

  // Rings in pixel space. Affine maps keep edges straight, so a row of pixel
  // centers is a straight scanline here.
  struct PixelPoly {
    std::vector<std::vector<PixelPoint>> rings;
    double min_col, max_col, min_row, max_row;
  };
  std::vector<PixelPoly> pix;
  pix.reserve(polys.size());
  for (const auto& poly : polys) {
    PixelPoly pp{{}, INFINITY, -INFINITY, INFINITY, -INFINITY};
    auto add_ring = [&](const Ring& ring) {
      std::vector<PixelPoint> r;
      r.reserve(ring.size());
      for (const auto& v : ring) {
        const PixelPoint q = world_to_pixel(geo, v.x, v.y);
        pp.min_col = std::min(pp.min_col, q.col);
        pp.max_col = std::max(pp.max_col, q.col);
        pp.min_row = std::min(pp.min_row, q.row);
        pp.max_row = std::max(pp.max_row, q.row);
        r.push_back(q);
      }
      pp.rings.push_back(std::move(r));
    };
    add_ring(poly.exterior);
    for (const auto& h : poly.holes) add_ring(h);
    pix.push_back(std::move(pp));
  }

  constexpr double kNear = 1e-6;  // pixels
  auto data = out.u8();

  parallel_for(static_cast<std::size_t>(height), workers, [&](std::size_t row_index) {
    const int row = static_cast<int>(row_index);
    const double r = row;
    std::vector<double> xs;
    for (std::size_t k = 0; k < pix.size(); ++k) {
      const auto& pp = pix[k];
      if (r < pp.min_row - kNear || r > pp.max_row + kNear) continue;
      const int c_lo = std::max(0, static_cast<int>(std::ceil(pp.min_col - kNear)));
      const int c_hi = std::min(width - 1, static_cast<int>(std::floor(pp.max_col + kNear)));
      if (c_lo > c_hi) continue;

      auto exact = [&](int c) {
        const WorldPoint w = pixel_to_world(geo, c, r);
        if (point_in_polygon(w, polys[k])) data[out.index(c, row)] = 1;
      };

      bool degenerate = false;
      for (const auto& ring : pp.rings) {
        for (const auto& v : ring) {
          if (std::abs(v.row - r) < kNear) {
            degenerate = true;
            break;
          }
        }
        if (degenerate) break;
      }
      if (degenerate) {
        for (int c = c_lo; c <= c_hi; ++c) exact(c);
        continue;
      }

      xs.clear();
      for (const auto& ring : pp.rings) {
        const std::size_t n = ring.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
          const PixelPoint a = ring[i];
          const PixelPoint b = ring[j];
          if ((a.row > r) != (b.row > r)) {
            xs.push_back(a.col + (r - a.row) * (b.col - a.col) / (b.row - a.row));
          }
        }
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t s = 0; s + 1 < xs.size(); s += 2) {
        const double lo = xs[s];
        const double hi = xs[s + 1];
        const int from = std::max(c_lo, static_cast<int>(std::ceil(lo - kNear)));
        const int to = std::min(c_hi, static_cast<int>(std::floor(hi + kNear)));
        for (int c = from; c <= to; ++c) {
          if (std::abs(c - lo) < kNear || std::abs(c - hi) < kNear) {
            exact(c);
          } else {
            data[out.index(c, row)] = 1;
          }
        }
      }
      // Pixel centers that graze a crossing from outside a span.
      for (double x : xs) {
        const int c = static_cast<int>(std::lround(x));
        if (c >= c_lo && c <= c_hi && std::abs(c - x) < kNear) exact(c);
      }
    }
  });
  return out;
}

std::vector<AnnotationSet> load_annotations_by_tile(const std::filesystem::path& path) {
  const auto features = read_ndjson(path);
  std::map<std::string, AnnotationSet> by_tile;
  std::map<std::string, std::set<std::string>> ids;
  for (std::size_t i = 0; i < features.size(); ++i) {
    with_line_context(path, i, [&] {
      const auto& f = features[i];
      const std::string kind = kind_of(f);
      if (kind != "array") {
        throw Error(ErrorCode::kFormat, "expected kind \"array\", got \"" + kind + "\"");
      }
      if (!f.contains("id")) throw Error(ErrorCode::kFormat, "feature lacks 'id'");
      std::string id = detail::id_from_json(f.at("id"));
      const std::string tile = f.value("tile_id", std::string());
      if (!ids[tile].insert(id).second) {
        throw Error(ErrorCode::kDuplicate, "duplicate annotation id '" + id + "'");
      }
      auto& set = by_tile[tile];
      set.tile_id = tile;
      set.polygons.push_back({std::move(id), polygon_from_feature(f)});
      return 0;
    });
  }
  std::vector<AnnotationSet> out;
  out.reserve(by_tile.size());
  for (auto& [_, set] : by_tile) out.push_back(std::move(set));
  return out;
}

AnnotationSet load_annotations(const std::filesystem::path& path) {
  auto sets = load_annotations_by_tile(path);
  if (sets.empty()) return {};
  if (sets.size() > 1) {
    throw Error(ErrorCode::kFormat, path.string() + ": annotations span " +
                                        std::to_string(sets.size()) + " tiles");
  }
  return std::move(sets.front());
}

std::vector<Region> load_regions(const std::filesystem::path& path) {
  const auto features = read_ndjson(path);
  std::vector<Region> out;
  std::set<std::string> names;
  for (std::size_t i = 0; i < features.size(); ++i) {
    with_line_context(path, i, [&] {
      const auto& f = features[i];
      const std::string kind = kind_of(f);
      if (kind != "region") {
        throw Error(ErrorCode::kFormat, "expected kind \"region\", got \"" + kind + "\"");
      }
      Region r;
      r.name = f.at("name").get<std::string>();
      r.id = f.contains("id") ? detail::id_from_json(f.at("id")) : r.name;
      if (!names.insert(r.name).second) {
        throw Error(ErrorCode::kDuplicate, "duplicate region name '" + r.name + "'");
      }
      r.boundary = polygon_from_feature(f);
      if (auto it = f.find("reported_capacity"); it != f.end() && !it->is_null()) {
        if (!it->is_number()) {
          throw Error(ErrorCode::kFormat, "'reported_capacity' must be a number");
        }
        r.reported_capacity = it->get<double>();
      }
      out.push_back(std::move(r));
      return 0;
    });
  }
  return out;
}

void save_annotations(std::span<const AnnotationSet> sets, const std::filesystem::path& path) {
  std::vector<json> lines;
  for (const auto& set : sets) {
    for (const auto& a : set.polygons) {
      lines.push_back({{"id", a.id},
                       {"kind", "array"},
                       {"exterior", detail::ring_to_json(a.polygon.exterior)},
                       {"holes", detail::holes_to_json(a.polygon.holes)},
                       {"tile_id", set.tile_id}});
    }
  }
  write_lines(lines, path);
}

void save_regions(std::span<const Region> regions, const std::filesystem::path& path) {
  std::vector<json> lines;
  for (const auto& r : regions) {
    json j = {{"id", r.id},
              {"kind", "region"},
              {"name", r.name},
              {"exterior", detail::ring_to_json(r.boundary.exterior)},
              {"holes", detail::holes_to_json(r.boundary.holes)}};
    if (r.reported_capacity) j["reported_capacity"] = *r.reported_capacity;
    lines.push_back(std::move(j));
  }
  write_lines(lines, path);
}

}  // namespace solarmap
