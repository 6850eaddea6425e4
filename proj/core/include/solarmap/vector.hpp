#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solarmap/raster.hpp"

namespace solarmap {

/// Implicitly closed: the first vertex is not repeated at the end.
using Ring = std::vector<WorldPoint>;

struct Polygon {
  Ring exterior;
  std::vector<Ring> holes;

  bool operator==(const Polygon&) const = default;
};

/// Positive for counter-clockwise rings in a y-up frame.
double ring_signed_area(const Ring& ring);
/// |exterior| minus the holes.
double polygon_area(const Polygon& poly);

/// Strips a repeated closing vertex from every ring and validates the result.
Polygon make_polygon(Ring exterior, std::vector<Ring> holes = {});

/// Throws Error(kGeometry) for rings with fewer than 3 vertices, a stored
/// closing vertex, or a self-intersecting exterior.
void validate_polygon(const Polygon& poly);

/// Even-odd rule. Points on any ring (within floating-point noise) count as
/// inside.
bool point_in_polygon(WorldPoint p, const Polygon& poly);

/// Pixel-center rule: a pixel is set iff the world position of its center is
/// inside any polygon.
Raster rasterize(std::span<const Polygon> polys, const GeoTransform& geo, int width,
                 int height, int workers = 1);

struct Annotation {
  std::string id;
  Polygon polygon;
};

struct AnnotationSet {
  std::string tile_id;
  std::vector<Annotation> polygons;
};

struct Region {
  std::string id;
  std::string name;
  Polygon boundary;
  /// kW
  std::optional<double> reported_capacity;
};

/// All "array" features in the file; they must share one tile id.
AnnotationSet load_annotations(const std::filesystem::path& path);
/// Array features grouped by tile id, groups sorted by tile id.
std::vector<AnnotationSet> load_annotations_by_tile(const std::filesystem::path& path);
std::vector<Region> load_regions(const std::filesystem::path& path);

void save_annotations(std::span<const AnnotationSet> sets, const std::filesystem::path& path);
void save_regions(std::span<const Region> regions, const std::filesystem::path& path);

}  // namespace solarmap
