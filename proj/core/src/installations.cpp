#include "solarmap/installations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include "json_geometry.hpp"
#include "solarmap/error.hpp"

namespace solarmap {

namespace {

using detail::json;

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // The smaller root wins, so roots are always the earliest pixel.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

struct Offset {
  int dc;
  int dr;
};

// Pixel offsets, beyond the 8-neighborhood, whose world length is within
// `distance`. Only the forward half is listed; links are symmetric.
std::vector<Offset> merge_offsets(const GeoTransform& g, double distance) {
  std::vector<Offset> out;
  if (!(distance > 0.0)) return out;
  const double det = std::abs(g.determinant());
  const int max_dc = static_cast<int>(std::ceil(distance * std::hypot(g.dy, g.rx) / det));
  const int max_dr = static_cast<int>(std::ceil(distance * std::hypot(g.ry, g.dx) / det));
  const double limit = distance * (1.0 + 1e-12);
  for (int dr = 0; dr <= max_dr; ++dr) {
    for (int dc = -max_dc; dc <= max_dc; ++dc) {
      if (dr == 0 && dc <= 0) continue;
      if (std::abs(dc) <= 1 && dr <= 1) continue;
      const double wx = dc * g.dx + dr * g.rx;
      const double wy = dc * g.ry + dr * g.dy;
      if (std::hypot(wx, wy) <= limit) out.push_back({dc, dr});
    }
  }
  return out;
}

// Corners are addressed by integer (i, j); corner (i, j) sits at pixel-space
// position (i - 0.5, j - 0.5).
struct Corner {
  int i;
  int j;
  bool operator==(const Corner&) const = default;
};

std::uint64_t corner_key(Corner c) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.i)) << 32) |
         static_cast<std::uint32_t>(c.j);
}

struct Edge {
  Corner from;
  Corner to;
  std::size_t pixel;  // index into the installation's pixel list
};

std::vector<Polygon> trace_outline(const std::vector<PixelIndex>& pixels,
                                   const GeoTransform& geo) {
  if (pixels.empty()) return {};
  int min_c = pixels.front().col, max_c = min_c;
  int min_r = pixels.front().row, max_r = min_r;
  for (const auto& p : pixels) {
    min_c = std::min(min_c, p.col);
    max_c = std::max(max_c, p.col);
    min_r = std::min(min_r, p.row);
    max_r = std::max(max_r, p.row);
  }
  // Local membership grid with a one-pixel margin; values are pixel index + 1.
  const int w = max_c - min_c + 3;
  const int h = max_r - min_r + 3;
  std::vector<std::size_t> local(static_cast<std::size_t>(w) * h, 0);
  auto slot = [&](int c, int r) -> std::size_t& {
    return local[static_cast<std::size_t>(r - min_r + 1) * w + (c - min_c + 1)];
  };
  for (std::size_t k = 0; k < pixels.size(); ++k) slot(pixels[k].col, pixels[k].row) = k + 1;
  auto member = [&](int c, int r) { return slot(c, r) != 0; };

  // 4-connected pieces, labelled in raster order of their first pixel.
  std::vector<int> piece(pixels.size(), -1);
  int pieces = 0;
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    if (piece[k] >= 0) continue;
    std::vector<std::size_t> stack{k};
    piece[k] = pieces;
    while (!stack.empty()) {
      const PixelIndex p = pixels[stack.back()];
      stack.pop_back();
      const int nc[4] = {p.col - 1, p.col + 1, p.col, p.col};
      const int nr[4] = {p.row, p.row, p.row - 1, p.row + 1};
      for (int n = 0; n < 4; ++n) {
        const std::size_t s = slot(nc[n], nr[n]);
        if (s != 0 && piece[s - 1] < 0) {
          piece[s - 1] = pieces;
          stack.push_back(s - 1);
        }
      }
    }
    ++pieces;
  }

  // Boundary edges, every pixel walked TL -> BL -> BR -> TR.
  std::vector<Edge> edges;
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    const int c = pixels[k].col;
    const int r = pixels[k].row;
    const Corner tl{c, r}, tr{c + 1, r}, br{c + 1, r + 1}, bl{c, r + 1};
    if (!member(c - 1, r)) edges.push_back({tl, bl, k});
    if (!member(c, r + 1)) edges.push_back({bl, br, k});
    if (!member(c + 1, r)) edges.push_back({br, tr, k});
    if (!member(c, r - 1)) edges.push_back({tr, tl, k});
  }
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> outgoing;
  outgoing.reserve(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) outgoing[corner_key(edges[e].from)].push_back(e);

  struct TracedRing {
    std::vector<Corner> corners;
    int piece;
    long long twice_area;  // in corner units; negative for outer rings
  };
  std::vector<TracedRing> rings;
  std::vector<bool> used(edges.size(), false);
  for (std::size_t start = 0; start < edges.size(); ++start) {
    if (used[start]) continue;
    TracedRing ring{{}, piece[edges[start].pixel], 0};
    std::size_t cur = start;
    for (;;) {
      used[cur] = true;
      ring.corners.push_back(edges[cur].from);
      const auto& next = outgoing[corner_key(edges[cur].to)];
      std::size_t chosen = next.front();
      if (next.size() > 1) {
        // Pinch vertex: stay with the current pixel, which keeps diagonal
        // neighbours in separate rings.
        for (std::size_t cand : next) {
          if (edges[cand].pixel == edges[cur].pixel) chosen = cand;
        }
      }
      if (chosen == start) break;
      cur = chosen;
    }
    // Drop vertices in the middle of straight runs.
    std::vector<Corner> simplified;
    const std::size_t n = ring.corners.size();
    for (std::size_t v = 0; v < n; ++v) {
      const Corner prev = ring.corners[(v + n - 1) % n];
      const Corner at = ring.corners[v];
      const Corner nxt = ring.corners[(v + 1) % n];
      const long long cr = static_cast<long long>(at.i - prev.i) * (nxt.j - at.j) -
                           static_cast<long long>(at.j - prev.j) * (nxt.i - at.i);
      if (cr != 0) simplified.push_back(at);
    }
    ring.corners = std::move(simplified);
    long long twice = 0;
    const std::size_t m = ring.corners.size();
    for (std::size_t v = 0; v < m; ++v) {
      const Corner a = ring.corners[v];
      const Corner b = ring.corners[(v + 1) % m];
      twice += static_cast<long long>(a.i) * b.j - static_cast<long long>(b.i) * a.j;
    }
    ring.twice_area = twice;
    rings.push_back(std::move(ring));
  }

  auto to_world = [&](const std::vector<Corner>& corners) {
    Ring out;
    out.reserve(corners.size());
    for (const auto& c : corners) out.push_back(pixel_to_world(geo, c.i - 0.5, c.j - 0.5));
    return out;
  };
  std::vector<Polygon> polys(static_cast<std::size_t>(pieces));
  for (const auto& ring : rings) {
    auto& poly = polys[static_cast<std::size_t>(ring.piece)];
    if (ring.twice_area < 0) {
      poly.exterior = to_world(ring.corners);
    } else {
      poly.holes.push_back(to_world(ring.corners));
    }
  }
  return polys;
}

}  // namespace

std::string feature_id(const Installation& inst) {
  if (inst.tile_id.empty()) return std::to_string(inst.id);
  return inst.tile_id + "/" + std::to_string(inst.id);
}

std::vector<Installation> extract_installations(const Raster& mask,
                                                const ExtractOptions& options) {
  if (!mask.is_mask()) {
    throw Error(ErrorCode::kInvalidArgument, "extract_installations expects a binary mask");
  }
  if (!(options.merge_distance >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "merge distance must be >= 0");
  }
  const GeoTransform& geo = mask.geo();
  const int w = mask.width();
  const int h = mask.height();

  // Compact index for every foreground pixel, in raster order.
  std::vector<std::int64_t> compact(mask.pixel_count(), -1);
  std::vector<PixelIndex> fg;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (mask.foreground(c, r)) {
        compact[mask.index(c, r)] = static_cast<std::int64_t>(fg.size());
        fg.push_back({c, r});
      }
    }
  }
  if (fg.empty()) return {};

  DisjointSet sets(fg.size());
  auto at = [&](int c, int r) -> std::int64_t {
    return mask.contains(c, r) ? compact[mask.index(c, r)] : -1;
  };
  for (std::size_t k = 0; k < fg.size(); ++k) {
    const auto [c, r] = fg[k];
    const int back_c[4] = {c - 1, c - 1, c, c + 1};
    const int back_r[4] = {r, r - 1, r - 1, r - 1};
    for (int n = 0; n < 4; ++n) {
      const std::int64_t other = at(back_c[n], back_r[n]);
      if (other >= 0) sets.unite(k, static_cast<std::size_t>(other));
    }
  }

  const auto offsets = merge_offsets(geo, options.merge_distance);
  if (!offsets.empty()) {
    // On an axis-aligned grid the closest pixels of two groups always lie on
    // their borders, so interior pixels can be skipped.
    std::vector<bool> candidate(fg.size(), true);
    if (geo.axis_aligned()) {
      for (std::size_t k = 0; k < fg.size(); ++k) {
        const auto [c, r] = fg[k];
        bool border = false;
        for (int dr = -1; dr <= 1 && !border; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if ((dc || dr) && at(c + dc, r + dr) < 0) {
              border = true;
              break;
            }
          }
        }
        candidate[k] = border;
      }
    }
    for (std::size_t k = 0; k < fg.size(); ++k) {
      if (!candidate[k]) continue;
      const auto [c, r] = fg[k];
      for (const auto& off : offsets) {
        const std::int64_t other = at(c + off.dc, r + off.dr);
        if (other >= 0 && candidate[static_cast<std::size_t>(other)]) {
          sets.unite(k, static_cast<std::size_t>(other));
        }
      }
    }
  }

  // Roots are the smallest member index, i.e. the group's first pixel, so
  // walking pixels in order visits groups in id order.
  std::vector<std::int64_t> group_of_root(fg.size(), -1);
  std::vector<std::vector<PixelIndex>> groups;
  for (std::size_t k = 0; k < fg.size(); ++k) {
    const std::size_t root = sets.find(k);
    if (group_of_root[root] < 0) {
      group_of_root[root] = static_cast<std::int64_t>(groups.size());
      groups.emplace_back();
    }
    groups[static_cast<std::size_t>(group_of_root[root])].push_back(fg[k]);
  }

  std::vector<Installation> out;
  const std::size_t min_pixels = std::max<std::size_t>(1, options.min_pixels);
  for (auto& pixels : groups) {
    if (pixels.size() < min_pixels) continue;
    Installation inst;
    inst.id = static_cast<int>(out.size()) + 1;
    inst.tile_id = mask.tile_id();
    inst.pixel_count = pixels.size();
    inst.area = static_cast<double>(inst.pixel_count) * geo.pixel_area();
    double sum_c = 0.0, sum_r = 0.0;
    for (const auto& p : pixels) {
      sum_c += p.col;
      sum_r += p.row;
    }
    const double n = static_cast<double>(pixels.size());
    inst.centroid = pixel_to_world(geo, sum_c / n, sum_r / n);
    inst.outline = trace_outline(pixels, geo);
    inst.pixels = std::move(pixels);
    out.push_back(std::move(inst));
  }
  return out;
}

double area(const Installation& inst, const GeoTransform& geo) {
  return static_cast<double>(inst.pixel_count) * geo.pixel_area();
}

double area(const Installation& inst) { return inst.area; }

Color mean_color(const Installation& inst, const Raster& rgb) {
  if (!rgb.is_rgb()) {
    throw Error(ErrorCode::kInvalidArgument, "mean_color expects a 3-band raster");
  }
  if (inst.pixels.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "installation carries no pixels");
  }
  Color sum{0.0, 0.0, 0.0};
  for (const auto& p : inst.pixels) {
    if (!rgb.contains(p.col, p.row)) {
      throw Error(ErrorCode::kSizeMismatch,
                  "RGB raster does not cover installation " + feature_id(inst));
    }
    for (int b = 0; b < 3; ++b) sum[b] += rgb.intensity(p.col, p.row, b);
  }
  const double n = static_cast<double>(inst.pixels.size());
  return {sum[0] / n, sum[1] / n, sum[2] / n};
}

void attach_mean_colors(std::span<Installation> insts, const Raster& rgb) {
  for (auto& inst : insts) inst.mean_color = mean_color(inst, rgb);
}

double outline_area(const Installation& inst) {
  double a = 0.0;
  for (const auto& p : inst.outline) a += polygon_area(p);
  return a;
}

void save_installations(std::span<const Installation> insts,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& inst : insts) {
    json parts = json::array();
    for (const auto& poly : inst.outline) {
      parts.push_back({{"exterior", detail::ring_to_json(poly.exterior)},
                       {"holes", detail::holes_to_json(poly.holes)}});
    }
    json j = {{"id", feature_id(inst)},
              {"kind", "array"},
              {"name", ""},
              {"tile_id", inst.tile_id},
              {"installation_id", inst.id},
              {"exterior", inst.outline.empty() ? json::array()
                                                : detail::ring_to_json(inst.outline[0].exterior)},
              {"holes", inst.outline.empty() ? json::array()
                                             : detail::holes_to_json(inst.outline[0].holes)},
              {"parts", std::move(parts)},
              {"pixel_count", inst.pixel_count},
              {"area_m2", inst.area},
              {"centroid", detail::point_to_json(inst.centroid)}};
    if (inst.mean_color) j["mean_color"] = *inst.mean_color;
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<Installation> load_installations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<Installation> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Installation inst;
      inst.tile_id = j.value("tile_id", std::string());
      inst.id = j.at("installation_id").get<int>();
      const std::string fid = detail::id_from_json(j.at("id"));
      if (!ids.insert(fid).second) {
        throw Error(ErrorCode::kDuplicate, "duplicate installation id '" + fid + "'");
      }
      inst.pixel_count = j.at("pixel_count").get<std::size_t>();
      inst.area = j.at("area_m2").get<double>();
      inst.centroid = detail::point_from_json(j.at("centroid"));
      if (j.contains("parts")) {
        for (const auto& part : j.at("parts")) {
          inst.outline.push_back({detail::ring_from_json(part.at("exterior")),
                                  detail::holes_from_json(part.value("holes", json()))});
        }
      } else if (j.contains("exterior")) {
        inst.outline.push_back({detail::ring_from_json(j.at("exterior")),
                                detail::holes_from_json(j.value("holes", json()))});
      }
      if (j.contains("mean_color") && !j.at("mean_color").is_null()) {
        inst.mean_color = j.at("mean_color").get<Color>();
      }
      out.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormat,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace solarmap
