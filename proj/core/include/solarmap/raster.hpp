#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace solarmap {

struct WorldPoint {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const WorldPoint&) const = default;
};

/// Fractional pixel coordinates; integer values address pixel centers.
struct PixelPoint {
  double col = 0.0;
  double row = 0.0;
  bool operator==(const PixelPoint&) const = default;
};

/// Affine pixel-to-world mapping. (x0, y0) is the world position of the
/// center of pixel (0, 0):
///   x = x0 + col*dx + row*rx
///   y = y0 + col*ry + row*dy
struct GeoTransform {
  double x0 = 0.0;
  double y0 = 0.0;
  double dx = 1.0;
  double dy = 1.0;
  double rx = 0.0;
  double ry = 0.0;
  std::string crs;

  double determinant() const { return dx * dy - rx * ry; }
  /// World area covered by one pixel.
  double pixel_area() const;
  bool invertible() const;
  bool axis_aligned() const { return rx == 0.0 && ry == 0.0; }

  /// North-up grid with square pixels of side `gsd`; rows grow southwards.
  static GeoTransform north_up(double x0, double y0, double gsd,
                               std::string crs = {});

  bool operator==(const GeoTransform&) const = default;
};

WorldPoint pixel_to_world(const GeoTransform& g, double col, double row);

/// Throws Error(kSingular) when the transform has a zero determinant.
PixelPoint world_to_pixel(const GeoTransform& g, double x, double y);

enum class DType : std::uint8_t { kF32, kU8 };

/// Row-major, band-interleaved-by-pixel grid.
///
/// The band count and dtype determine how values are interpreted:
///   1 band f32  confidence in [0, 1]
///   1 band u8   binary mask in {0, 1}
///   3 band f32  RGB intensities in [0, 1]
///   3 band u8   RGB intensities in [0, 255]
class Raster {
 public:
  Raster() = default;
  /// Zero-filled raster.
  Raster(int width, int height, int bands, DType dtype, GeoTransform geo,
         std::string tile_id = {});

  static Raster confidence(int width, int height, GeoTransform geo,
                           std::vector<float> values, std::string tile_id = {});
  /// `values` may be empty for an all-background mask.
  static Raster mask(int width, int height, GeoTransform geo,
                     std::vector<std::uint8_t> values = {},
                     std::string tile_id = {});
  static Raster rgb(int width, int height, GeoTransform geo,
                    std::vector<float> values, std::string tile_id = {});
  static Raster rgb8(int width, int height, GeoTransform geo,
                     std::vector<std::uint8_t> values, std::string tile_id = {});

  int width() const { return width_; }
  int height() const { return height_; }
  int bands() const { return bands_; }
  DType dtype() const { return dtype_; }
  const GeoTransform& geo() const { return geo_; }
  const std::string& tile_id() const { return tile_id_; }
  void set_tile_id(std::string id) { tile_id_ = std::move(id); }

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::size_t value_count() const { return pixel_count() * bands_; }
  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }
  bool contains(int col, int row) const {
    return col >= 0 && row >= 0 && col < width_ && row < height_;
  }

  bool is_confidence() const { return bands_ == 1 && dtype_ == DType::kF32; }
  bool is_mask() const { return bands_ == 1 && dtype_ == DType::kU8; }
  bool is_rgb() const { return bands_ == 3; }

  std::span<const float> f32() const { return f32_; }
  std::span<float> f32() { return f32_; }
  std::span<const std::uint8_t> u8() const { return u8_; }
  std::span<std::uint8_t> u8() { return u8_; }

  /// Value as a real number: raw for f32 and masks, scaled to [0, 1] for
  /// 8-bit RGB.
  double intensity(int col, int row, int band = 0) const;
  bool foreground(int col, int row) const {
    return u8_[index(col, row)] != 0;
  }

  std::size_t count_foreground() const;

  /// Throws Error if any invariant of the declared kind is violated.
  void validate() const;

  bool operator==(const Raster&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int bands_ = 1;
  DType dtype_ = DType::kU8;
  GeoTransform geo_;
  std::string tile_id_;
  std::vector<float> f32_;
  std::vector<std::uint8_t> u8_;
};

/// mask = conf > t, strictly. Geotransform and tile id carry over.
Raster threshold(const Raster& conf, double t);

// SARF: six LF-terminated ASCII header lines followed by a little-endian
// payload.
//   SARF1
//   <width> <height> <bands>
//   f32|u8
//   <x0> <y0> <dx> <dy> <rx> <ry>
//   <crs>
//   <tile_id>
Raster read_sarf(std::istream& in);
void write_sarf(const Raster& r, std::ostream& out);
Raster load_raster(const std::filesystem::path& path);
void save_raster(const Raster& r, const std::filesystem::path& path);

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);

}  // namespace solarmap
