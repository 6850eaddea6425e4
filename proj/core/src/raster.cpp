#include "solarmap/raster.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "solarmap/error.hpp"

namespace solarmap {

namespace {

// Pixel coordinates this close to an integer are reported as that integer, so
// pixel centers survive a world round trip exactly.
constexpr double kSnapTolerance = 1e-9;

double snap(double v, double tolerance) {
  const double r = std::nearbyint(v);
  return std::abs(v - r) <= tolerance ? r : v;
}

void require_dims(int width, int height, int bands) {
  if (width < 0 || height < 0) {
    throw Error(ErrorCode::kInvalidArgument, "raster dimensions must be non-negative");
  }
  if (bands != 1 && bands != 3) {
    throw Error(ErrorCode::kInvalidArgument,
                "raster must have 1 or 3 bands, got " + std::to_string(bands));
  }
}

template <typename T>
void check_length(const std::vector<T>& v, std::size_t expected) {
  if (v.size() != expected) {
    throw Error(ErrorCode::kSizeMismatch,
                "raster payload holds " + std::to_string(v.size()) +
                    " values, expected " + std::to_string(expected));
  }
}

std::string single_line(const std::string& s, const char* what) {
  if (s.find('\n') != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must not contain a newline");
  }
  return s;
}

bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  return true;
}

double parse_double(std::string_view tok) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kFormat, "SARF: bad number '" + std::string(tok) + "'");
  }
  return v;
}

long long parse_int(std::string_view tok) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw Error(ErrorCode::kFormat, "SARF: bad integer '" + std::string(tok) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

double GeoTransform::pixel_area() const { return std::abs(determinant()); }

bool GeoTransform::invertible() const {
  const double det = determinant();
  return std::isfinite(det) && det != 0.0;
}

GeoTransform GeoTransform::north_up(double x0, double y0, double gsd, std::string crs) {
  GeoTransform g;
  g.x0 = x0;
  g.y0 = y0;
  g.dx = gsd;
  g.dy = -gsd;
  g.crs = std::move(crs);
  return g;
}

WorldPoint pixel_to_world(const GeoTransform& g, double col, double row) {
  return {g.x0 + col * g.dx + row * g.rx, g.y0 + col * g.ry + row * g.dy};
}

PixelPoint world_to_pixel(const GeoTransform& g, double x, double y) {
  if (!g.invertible()) {
    throw Error(ErrorCode::kSingular, "geotransform is singular (dx*dy - rx*ry == 0)");
  }
  const double ex = x - g.x0;
  const double ey = y - g.y0;
  // World coordinates far from the origin carry a few ulps of rounding from
  // pixel_to_world; integer pixel positions must still come back exact.
  const double eps = std::numeric_limits<double>::epsilon();
  const double world = std::max({std::abs(x), std::abs(y), std::abs(g.x0), std::abs(g.y0)});
  const double step = std::min(std::hypot(g.dx, g.ry), std::hypot(g.rx, g.dy));
  const double tol = kSnapTolerance + 8.0 * eps * world / step;
  if (g.axis_aligned()) {
    return {snap(ex / g.dx, tol), snap(ey / g.dy, tol)};
  }
  const double det = g.determinant();
  return {snap((g.dy * ex - g.rx * ey) / det, tol), snap((g.dx * ey - g.ry * ex) / det, tol)};
}

Raster::Raster(int width, int height, int bands, DType dtype, GeoTransform geo,
               std::string tile_id)
    : width_(width), height_(height), bands_(bands), dtype_(dtype),
      geo_(std::move(geo)), tile_id_(std::move(tile_id)) {
  require_dims(width, height, bands);
  if (dtype_ == DType::kF32) {
    f32_.assign(value_count(), 0.0f);
  } else {
    u8_.assign(value_count(), 0);
  }
}

Raster Raster::confidence(int width, int height, GeoTransform geo,
                          std::vector<float> values, std::string tile_id) {
  Raster r(0, 0, 1, DType::kF32, std::move(geo), std::move(tile_id));
  r.width_ = width;
  r.height_ = height;
  require_dims(width, height, 1);
  check_length(values, r.value_count());
  r.f32_ = std::move(values);
  r.validate();
  return r;
}

Raster Raster::mask(int width, int height, GeoTransform geo,
                    std::vector<std::uint8_t> values, std::string tile_id) {
  Raster r(width, height, 1, DType::kU8, std::move(geo), std::move(tile_id));
  if (!values.empty()) {
    check_length(values, r.value_count());
    r.u8_ = std::move(values);
    r.validate();
  }
  return r;
}

Raster Raster::rgb(int width, int height, GeoTransform geo, std::vector<float> values,
                   std::string tile_id) {
  Raster r(0, 0, 3, DType::kF32, std::move(geo), std::move(tile_id));
  r.width_ = width;
  r.height_ = height;
  require_dims(width, height, 3);
  check_length(values, r.value_count());
  r.f32_ = std::move(values);
  r.validate();
  return r;
}

Raster Raster::rgb8(int width, int height, GeoTransform geo,
                    std::vector<std::uint8_t> values, std::string tile_id) {
  Raster r(0, 0, 3, DType::kU8, std::move(geo), std::move(tile_id));
  r.width_ = width;
  r.height_ = height;
  require_dims(width, height, 3);
  check_length(values, r.value_count());
  r.u8_ = std::move(values);
  return r;
}

double Raster::intensity(int col, int row, int band) const {
  const std::size_t i = index(col, row) * bands_ + band;
  if (dtype_ == DType::kF32) return f32_[i];
  if (bands_ == 3) return u8_[i] / 255.0;
  return u8_[i];
}

std::size_t Raster::count_foreground() const {
  return static_cast<std::size_t>(
      std::count_if(u8_.begin(), u8_.end(), [](std::uint8_t v) { return v != 0; }));
}

void Raster::validate() const {
  require_dims(width_, height_, bands_);
  if (dtype_ == DType::kF32) {
    check_length(f32_, value_count());
    for (float v : f32_) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw Error(ErrorCode::kRange,
                    "value " + std::to_string(v) + " outside [0, 1] in " +
                        (bands_ == 1 ? "confidence" : "RGB") + " raster");
      }
    }
  } else {
    check_length(u8_, value_count());
    if (bands_ == 1) {
      for (std::uint8_t v : u8_) {
        if (v > 1) {
          throw Error(ErrorCode::kRange,
                      "mask value " + std::to_string(v) + " is not 0 or 1");
        }
      }
    }
  }
  if (!geo_.invertible()) {
    throw Error(ErrorCode::kSingular, "raster geotransform is singular");
  }
}

Raster threshold(const Raster& conf, double t) {
  if (!conf.is_confidence()) {
    throw Error(ErrorCode::kInvalidArgument,
                "threshold expects a single-band confidence raster, got " +
                    std::to_string(conf.bands()) + " band(s)");
  }
  if (!(t >= 0.0 && t <= 1.0)) {
    throw Error(ErrorCode::kRange, "threshold must lie in [0, 1]");
  }
  Raster out(conf.width(), conf.height(), 1, DType::kU8, conf.geo(), conf.tile_id());
  auto src = conf.f32();
  auto dst = out.u8();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<double>(src[i]) > t ? 1 : 0;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error(ErrorCode::kFormat, "cannot format number");
  return std::string(buf, ptr);
}

void write_sarf(const Raster& r, std::ostream& out) {
  const auto& g = r.geo();
  out << "SARF1\n"
      << r.width() << ' ' << r.height() << ' ' << r.bands() << '\n'
      << (r.dtype() == DType::kF32 ? "f32" : "u8") << '\n'
      << format_double(g.x0) << ' ' << format_double(g.y0) << ' '
      << format_double(g.dx) << ' ' << format_double(g.dy) << ' '
      << format_double(g.rx) << ' ' << format_double(g.ry) << '\n'
      << single_line(g.crs, "crs") << '\n'
      << single_line(r.tile_id(), "tile_id") << '\n';
  if (r.dtype() == DType::kU8) {
    auto data = r.u8();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
  } else {
    auto data = r.f32();
    std::vector<std::uint32_t> words(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      words[i] = to_little(std::bit_cast<std::uint32_t>(data[i]));
    }
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  }
}

Raster read_sarf(std::istream& in) {
  std::string magic, dims, dtype, geo_line, crs, tile_id;
  if (!read_line(in, magic) || magic != "SARF1") {
    throw Error(ErrorCode::kFormat, "SARF: missing 'SARF1' magic line");
  }
  if (!read_line(in, dims) || !read_line(in, dtype) || !read_line(in, geo_line) ||
      !read_line(in, crs) || !read_line(in, tile_id)) {
    throw Error(ErrorCode::kFormat, "SARF: truncated header");
  }
  const auto dim_tokens = split_ws(dims);
  if (dim_tokens.size() != 3) {
    throw Error(ErrorCode::kFormat, "SARF: expected '<width> <height> <bands>'");
  }
  const long long width = parse_int(dim_tokens[0]);
  const long long height = parse_int(dim_tokens[1]);
  const long long bands = parse_int(dim_tokens[2]);
  if (width < 0 || height < 0 || width > (1 << 24) || height > (1 << 24)) {
    throw Error(ErrorCode::kFormat, "SARF: implausible dimensions");
  }
  if (bands != 1 && bands != 3) {
    throw Error(ErrorCode::kFormat, "SARF: bands must be 1 or 3");
  }
  DType dt;
  if (dtype == "f32") {
    dt = DType::kF32;
  } else if (dtype == "u8") {
    dt = DType::kU8;
  } else {
    throw Error(ErrorCode::kFormat, "SARF: unknown dtype '" + dtype + "'");
  }
  const auto geo_tokens = split_ws(geo_line);
  if (geo_tokens.size() != 6) {
    throw Error(ErrorCode::kFormat, "SARF: geotransform line needs 6 numbers");
  }
  GeoTransform g;
  g.x0 = parse_double(geo_tokens[0]);
  g.y0 = parse_double(geo_tokens[1]);
  g.dx = parse_double(geo_tokens[2]);
  g.dy = parse_double(geo_tokens[3]);
  g.rx = parse_double(geo_tokens[4]);
  g.ry = parse_double(geo_tokens[5]);
  g.crs = crs;

  Raster r(static_cast<int>(width), static_cast<int>(height), static_cast<int>(bands), dt,
           g, tile_id);
  const std::size_t values = r.value_count();
  const std::size_t value_size = dt == DType::kF32 ? 4 : 1;
  std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  if (payload.size() != values * value_size) {
    throw Error(ErrorCode::kSizeMismatch,
                "SARF: header declares " + std::to_string(values) + " values (" +
                    std::to_string(values * value_size) + " bytes) but payload has " +
                    std::to_string(payload.size()) + " bytes");
  }
  if (dt == DType::kU8) {
    std::memcpy(r.u8().data(), payload.data(), payload.size());
  } else {
    auto dst = r.f32();
    for (std::size_t i = 0; i < values; ++i) {
      std::uint32_t w;
      std::memcpy(&w, payload.data() + i * 4, 4);
      dst[i] = std::bit_cast<float>(to_little(w));
    }
  }
  r.validate();
  return r;
}

Raster load_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open raster " + path.string());
  try {
    return read_sarf(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void save_raster(const Raster& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write raster " + path.string());
  write_sarf(r, out);
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace solarmap
