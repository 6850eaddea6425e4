#include "solarmap/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "solarmap/error.hpp"

namespace solarmap {

namespace {

// mt19937_64 output mapped to [0, 1) with 53 random bits.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

class Gaussian {
 public:
  explicit Gaussian(std::mt19937_64& rng) : rng_(rng) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - unit(rng_);  // (0, 1]
    const double u2 = unit(rng_);
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64& rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct Box {
  double x0, y0, x1, y1;
};

double box_gap(const Box& a, const Box& b) {
  const double gx = std::max({0.0, a.x0 - b.x1, b.x0 - a.x1});
  const double gy = std::max({0.0, a.y0 - b.y1, b.y0 - a.y1});
  return std::hypot(gx, gy);
}

std::uint64_t tile_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void check(const SceneConfig& cfg) {
  if (cfg.width <= 0 || cfg.height <= 0) throw Error(ErrorCode::kInvalidArgument, "empty tile");
  if (!(cfg.gsd > 0.0)) throw Error(ErrorCode::kInvalidArgument, "gsd must be > 0");
  if (cfg.min_panels < 0 || cfg.max_panels < cfg.min_panels) {
    throw Error(ErrorCode::kInvalidArgument, "bad panel count range");
  }
  if (!(cfg.min_side > 0.0) || cfg.max_side < cfg.min_side) {
    throw Error(ErrorCode::kInvalidArgument, "bad panel side range");
  }
  if (cfg.tiles_per_row <= 0) throw Error(ErrorCode::kInvalidArgument, "tiles_per_row must be > 0");
}

}  // namespace

SceneStyle shifted_style() {
  SceneStyle s;
  s.panel = {0.30, 0.32, 0.36};
  s.ground = {0.62, 0.50, 0.36};
  return s;
}

SyntheticTile make_tile(const SceneConfig& cfg, std::size_t index, std::uint64_t seed) {
  check(cfg);
  std::mt19937_64 rng(tile_seed(seed, index));
  const double tile_w = cfg.width * cfg.gsd;
  const double tile_h = cfg.height * cfg.gsd;
  const std::size_t gx = index % static_cast<std::size_t>(cfg.tiles_per_row);
  const std::size_t gy = index / static_cast<std::size_t>(cfg.tiles_per_row);
  // West and north edges of the tile; pixel centers sit half a pixel inside.
  const double west = cfg.origin.x + static_cast<double>(gx) * tile_w;
  const double north = cfg.origin.y - static_cast<double>(gy) * tile_h;
  const GeoTransform geo = GeoTransform::north_up(west + cfg.gsd / 2, north - cfg.gsd / 2,
                                                  cfg.gsd, cfg.crs);
  char id_buf[32];
  std::snprintf(id_buf, sizeof id_buf, "t%04zu", index);
  const std::string tile_id = id_buf;

  const int target = cfg.min_panels +
                     static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.max_panels -
                                                                        cfg.min_panels + 1));
  std::vector<Box> boxes;
  for (int attempt = 0; attempt < 200 * std::max(target, 1) &&
                        static_cast<int>(boxes.size()) < target;
       ++attempt) {
    const double w = uniform(rng, cfg.min_side, cfg.max_side);
    const double h = uniform(rng, cfg.min_side, cfg.max_side);
    const double lo_x = west + cfg.gap;
    const double hi_x = west + tile_w - cfg.gap - w;
    const double lo_y = north - tile_h + cfg.gap;
    const double hi_y = north - cfg.gap - h;
    if (hi_x <= lo_x || hi_y <= lo_y) continue;
    // Corners are snapped to the pixel grid edges so the planted panel is
    // exactly its rasterization.
    const auto snap_x = [&](double x) { return west + std::round((x - west) / cfg.gsd) * cfg.gsd; };
    const auto snap_y = [&](double y) {
      return north - std::round((north - y) / cfg.gsd) * cfg.gsd;
    };
    const double x0 = snap_x(uniform(rng, lo_x, hi_x));
    const double y0 = snap_y(uniform(rng, lo_y, hi_y));
    const Box b{x0, y0, snap_x(x0 + w), snap_y(y0 + h)};
    if (b.x1 - b.x0 < cfg.gsd || b.y1 - b.y0 < cfg.gsd) continue;
    if (std::any_of(boxes.begin(), boxes.end(),
                    [&](const Box& o) { return box_gap(o, b) < cfg.gap; })) {
      continue;
    }
    boxes.push_back(b);
  }

  SyntheticTile out;
  out.truth.tile_id = tile_id;
  std::vector<Polygon> polys;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    Polygon p = make_polygon({{b.x0, b.y0}, {b.x1, b.y0}, {b.x1, b.y1}, {b.x0, b.y1}});
    polys.push_back(p);
    out.truth.polygons.push_back({tile_id + "/p" + std::to_string(i + 1), std::move(p)});
  }
  Raster mask = rasterize(polys, geo, cfg.width, cfg.height);
  mask.set_tile_id(tile_id);

  Gaussian noise(rng);
  std::vector<float> rgb(mask.pixel_count() * 3);
  const auto m = mask.u8();
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
    const Color& base = m[i] ? cfg.style.panel : cfg.style.ground;
    for (int b = 0; b < 3; ++b) {
      const double v = base[b] + cfg.style.noise_sd * noise();
      rgb[i * 3 + b] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  out.tile.image = Raster::rgb(cfg.width, cfg.height, geo, std::move(rgb), tile_id);
  out.tile.mask = std::move(mask);
  return out;
}

std::vector<SyntheticTile> make_scene(const SceneConfig& cfg, std::size_t count,
                                      std::uint64_t seed) {
  std::vector<SyntheticTile> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_tile(cfg, i, seed));
  return out;
}

std::vector<LabeledTile> labeled_tiles(const std::vector<SyntheticTile>& scene) {
  std::vector<LabeledTile> out;
  out.reserve(scene.size());
  for (const auto& s : scene) out.push_back(s.tile);
  return out;
}

std::vector<Region> make_regions(const std::vector<SyntheticTile>& scene, double gamma,
                                 double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Region> out;
  out.reserve(scene.size());
  for (const auto& s : scene) {
    const Raster& img = s.tile.image;
    const GeoTransform& g = img.geo();
    const WorldPoint a = pixel_to_world(g, -0.5, -0.5);
    const WorldPoint b = pixel_to_world(g, img.width() - 0.5, img.height() - 0.5);
    double panel_area = 0.0;
    for (const auto& ann : s.truth.polygons) panel_area += polygon_area(ann.polygon);
    Region r;
    r.id = "region-" + s.truth.tile_id;
    r.name = s.truth.tile_id;
    r.boundary = make_polygon({{a.x, b.y}, {b.x, b.y}, {b.x, a.y}, {a.x, a.y}});
    r.reported_capacity = gamma * panel_area * uniform(rng, 1.0 - noise, 1.0 + noise);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace solarmap
