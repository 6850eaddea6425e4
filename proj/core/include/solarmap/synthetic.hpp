#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "solarmap/installations.hpp"
#include "solarmap/segmenter.hpp"
#include "solarmap/vector.hpp"

namespace solarmap {

// Generated overhead scenes: axis-aligned rectangular panels on open ground,
// with independent Gaussian noise on every band of every pixel.

struct SceneStyle {
  Color panel{0.12, 0.20, 0.55};
  Color ground{0.35, 0.52, 0.25};
  double noise_sd = 0.05;
};

/// Same layout statistics, different materials: grey panels on bare soil.
SceneStyle shifted_style();

struct SceneConfig {
  int width = 128;
  int height = 128;
  /// m per pixel
  double gsd = 0.3;
  int min_panels = 2;
  int max_panels = 6;
  /// Panel side lengths in m.
  double min_side = 3.0;
  double max_side = 9.0;
  /// Minimum world distance between two panels and between a panel and the
  /// tile edge, in m.
  double gap = 3.0;
  /// Tiles are laid out on a grid this many tiles wide.
  int tiles_per_row = 8;
  WorldPoint origin{500000.0, 4650000.0};
  std::string crs = "EPSG:32618";
  SceneStyle style;
};

struct SyntheticTile {
  LabeledTile tile;
  AnnotationSet truth;
};

/// Tile `index` of the grid, generated from its own seed stream.
SyntheticTile make_tile(const SceneConfig& cfg, std::size_t index, std::uint64_t seed);
std::vector<SyntheticTile> make_scene(const SceneConfig& cfg, std::size_t count,
                                      std::uint64_t seed);

std::vector<LabeledTile> labeled_tiles(const std::vector<SyntheticTile>& scene);

/// One region per tile, covering the tile's pixel footprint. The reported
/// capacity is gamma times the planted panel area, scaled by a uniform factor
/// in [1 - noise, 1 + noise].
std::vector<Region> make_regions(const std::vector<SyntheticTile>& scene, double gamma,
                                 double noise, std::uint64_t seed);

}  // namespace solarmap
