#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solarmap/raster.hpp"
#include "solarmap/vector.hpp"

namespace solarmap {

struct PixelIndex {
  int col = 0;
  int row = 0;

  bool operator==(const PixelIndex&) const = default;
  /// Raster-scan order.
  friend std::strong_ordering operator<=>(const PixelIndex& a, const PixelIndex& b) {
    if (auto c = a.row <=> b.row; c != 0) return c;
    return a.col <=> b.col;
  }
};

using Color = std::array<double, 3>;

/// A group of panel pixels taken to sit on one structure.
struct Installation {
  int id = 0;
  std::string tile_id;
  /// Sorted in raster-scan order. Empty for installations read back from
  /// NDJSON, which stores geometry only.
  std::vector<PixelIndex> pixels;
  std::size_t pixel_count = 0;
  /// m^2: pixel_count times the world area of one pixel.
  double area = 0.0;
  /// World image of the mean pixel index.
  WorldPoint centroid;
  /// Pixel-boundary trace, one polygon per 4-connected piece, pieces in
  /// raster-scan order of their first pixel.
  std::vector<Polygon> outline;
  std::optional<Color> mean_color;
};

/// "<tile_id>/<id>", or just the id when the tile id is empty.
std::string feature_id(const Installation& inst);

struct ExtractOptions {
  /// World distance (m) within which two foreground pixel centers are linked
  /// in addition to 8-adjacency. 0 gives plain 8-connectivity.
  double merge_distance = 1.8;
  /// Groups smaller than this are dropped; 1 keeps everything.
  std::size_t min_pixels = 4;
};

/// Partitions the mask foreground into installations. Ids start at 1 and
/// follow the raster-scan position of each group's first pixel.
std::vector<Installation> extract_installations(const Raster& mask,
                                                const ExtractOptions& options = {});

/// pixel_count times the pixel area of `geo`.
double area(const Installation& inst, const GeoTransform& geo);
double area(const Installation& inst);

/// Per-band mean intensity over the installation's pixels.
Color mean_color(const Installation& inst, const Raster& rgb);
void attach_mean_colors(std::span<Installation> insts, const Raster& rgb);

/// Area of the traced outline (exteriors minus holes).
double outline_area(const Installation& inst);

void save_installations(std::span<const Installation> insts,
                        const std::filesystem::path& path);
std::vector<Installation> load_installations(const std::filesystem::path& path);

}  // namespace solarmap
