#include "solarmap/review.hpp"

#include <fcntl.h>
#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <shared_mutex>
#include <sstream>

#include "json_geometry.hpp"
#include "solarmap/error.hpp"

namespace solarmap::review {

namespace {

using detail::json;

json polygon_to_json(const Polygon& p) {
  return {{"exterior", detail::ring_to_json(p.exterior)},
          {"holes", detail::holes_to_json(p.holes)}};
}

Polygon polygon_from_json(const json& j) {
  return {detail::ring_from_json(j.at("exterior")),
          detail::holes_from_json(j.value("holes", json()))};
}

json candidate_to_json(const Candidate& c) {
  json parts = json::array();
  for (const auto& p : c.installation.outline) parts.push_back(polygon_to_json(p));
  return {{"id", c.id},
          {"tile_id", c.installation.tile_id},
          {"installation_id", c.installation.id},
          {"pixel_count", c.installation.pixel_count},
          {"area_m2", c.installation.area},
          {"centroid", detail::point_to_json(c.installation.centroid)},
          {"parts", std::move(parts)}};
}

Candidate candidate_from_json(const json& j) {
  Candidate c;
  c.id = j.at("id").get<std::string>();
  c.installation.tile_id = j.at("tile_id").get<std::string>();
  c.installation.id = j.at("installation_id").get<int>();
  c.installation.pixel_count = j.at("pixel_count").get<std::size_t>();
  c.installation.area = j.at("area_m2").get<double>();
  c.installation.centroid = detail::point_from_json(j.at("centroid"));
  for (const auto& p : j.at("parts")) c.installation.outline.push_back(polygon_from_json(p));
  return c;
}

json mark_to_json(const MissedMark& m) {
  json j = {{"mode", to_string(m.mode)},
            {"note", m.note},
            {"possible_duplicates", m.possible_duplicates},
            {"at", m.at}};
  if (m.point) j["point"] = detail::point_to_json(*m.point);
  if (m.outline) j["outline"] = polygon_to_json(*m.outline);
  return j;
}

MissedMark mark_from_json(const json& j) {
  MissedMark m;
  if (j.contains("point")) m.point = detail::point_from_json(j.at("point"));
  if (j.contains("outline")) m.outline = polygon_from_json(j.at("outline"));
  m.mode = missed_mode_from_string(j.at("mode").get<std::string>());
  m.note = j.value("note", std::string());
  m.possible_duplicates = j.value("possible_duplicates", std::vector<std::string>{});
  m.at = j.at("at").get<std::int64_t>();
  return m;
}

const Candidate* find_candidate(const ReviewSession& s, const std::string& cid) {
  for (const auto& c : s.candidates) {
    if (c.id == cid) return &c;
  }
  return nullptr;
}

// The single place where events change a session, shared by live writes and
// replay so both always agree.
void apply(ReviewSession& s, const json& e) {
  const std::string type = e.at("type").get<std::string>();
  const std::int64_t at = e.at("at").get<std::int64_t>();
  if (type == "created") {
    s = ReviewSession{};
    s.id = e.at("session").get<std::string>();
    s.region = e.at("region").get<std::string>();
    s.predictions = e.value("predictions", std::string());
    for (const auto& c : e.at("candidates")) s.candidates.push_back(candidate_from_json(c));
    s.created_at = at;
  } else if (type == "verdict") {
    s.decisions[e.at("candidate").get<std::string>()] = {
        verdict_label_from_string(e.at("label").get<std::string>()),
        e.value("note", std::string()), at};
  } else if (type == "amend") {
    const std::string cid = e.at("candidate").get<std::string>();
    Decision& d = s.decisions.at(cid);
    Amendment a{cid, d.label, verdict_label_from_string(e.at("label").get<std::string>()),
                e.value("note", std::string()), at};
    d = {a.label, a.note, at};
    s.amendments.push_back(std::move(a));
  } else if (type == "missed") {
    s.missed.push_back(mark_from_json(e.at("mark")));
  } else if (type == "closed") {
    s.status = SessionStatus::kClosed;
  } else {
    throw Error(ErrorCode::kFormat, "unknown session event '" + type + "'");
  }
  s.updated_at = at;
}

void append_line(const std::filesystem::path& path, const std::string& line, bool create) {
  const int flags = O_WRONLY | O_APPEND | O_CLOEXEC | (create ? O_CREAT | O_EXCL : 0);
  const int fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string() + ": " + std::strerror(errno));
  }
  const std::string data = line + '\n';
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      const int err = errno;
      ::close(fd);
      throw Error(ErrorCode::kIo, "write failed for " + path.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw Error(ErrorCode::kIo, "fsync failed for " + path.string());
}

struct ReplayResult {
  ReviewSession session;
  std::uintmax_t complete_bytes = 0;
};

ReplayResult replay_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  ReplayResult out;
  bool created = false;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // interrupted write
    ++line_no;
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    try {
      const json e = json::parse(line);
      if (!created && e.at("type") != "created") {
        throw Error(ErrorCode::kFormat, "log does not start with a created event");
      }
      apply(out.session, e);
      created = true;
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::kFormat,
                  path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    } catch (const std::out_of_range& ex) {
      throw Error(ErrorCode::kFormat, path.string() + ":" + std::to_string(line_no) +
                                          ": event refers to an unknown candidate");
    }
    out.complete_bytes = pos;
  }
  if (!created) throw Error(ErrorCode::kFormat, path.string() + ": empty session log");
  return out;
}

bool mark_hits(const MissedMark& m, const Candidate& c) {
  for (const auto& part : c.installation.outline) {
    if (m.point && point_in_polygon(*m.point, part)) return true;
    if (m.outline) {
      for (const auto& v : m.outline->exterior) {
        if (point_in_polygon(v, part)) return true;
      }
      for (const auto& v : part.exterior) {
        if (point_in_polygon(v, *m.outline)) return true;
      }
    }
  }
  return false;
}

json decision_json(const Decision& d) {
  return {{"label", to_string(d.label)}, {"note", d.note}, {"at", d.at}};
}

Raster load_tile(const StoreConfig& cfg, const std::string& tile_id) {
  const auto path = cfg.tiles_dir / (tile_id + ".sarf");
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kNotFound, "no imagery for tile '" + tile_id + "'");
  }
  Raster r = load_raster(path);
  if (!r.is_rgb()) throw Error(ErrorCode::kFormat, path.string() + " is not an RGB raster");
  return r;
}

}  // namespace

std::string to_string(SessionStatus s) { return s == SessionStatus::kOpen ? "open" : "closed"; }
std::string to_string(MissedMode m) { return m == MissedMode::kQueue ? "queue" : "browse"; }

MissedMode missed_mode_from_string(const std::string& s) {
  if (s == "queue") return MissedMode::kQueue;
  if (s == "browse") return MissedMode::kBrowse;
  throw Error(ErrorCode::kInvalidArgument, "missed mode must be 'queue' or 'browse', got '" + s + "'");
}

std::optional<std::size_t> ReviewSession::first_undecided() const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!decisions.count(candidates[i].id)) return i;
  }
  return std::nullopt;
}

std::vector<std::string> ReviewSession::candidate_ids() const {
  std::vector<std::string> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(c.id);
  return out;
}

std::vector<Verdict> ReviewSession::verdicts() const {
  std::vector<Verdict> out;
  for (const auto& c : candidates) {
    if (auto it = decisions.find(c.id); it != decisions.end()) {
      out.push_back({c.id, it->second.label, it->second.note});
    }
  }
  for (const auto& m : missed) out.push_back({"", VerdictLabel::kMissed, m.note});
  return out;
}

std::vector<Candidate> region_candidates(std::span<const Installation> predictions,
                                         const Region& region) {
  std::vector<Candidate> out;
  std::set<std::string> ids;
  for (const auto& inst : predictions) {
    const std::string fid = feature_id(inst);
    if (!ids.insert(fid).second) {
      throw Error(ErrorCode::kDuplicate, "duplicate installation id '" + fid + "'");
    }
    if (!point_in_polygon(inst.centroid, region.boundary)) continue;
    Candidate c{fid, inst};
    c.installation.pixels.clear();
    c.installation.mean_color.reset();
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.installation.tile_id != b.installation.tile_id) {
      return a.installation.tile_id < b.installation.tile_id;
    }
    return a.installation.id < b.installation.id;
  });
  return out;
}

ReviewSession replay(const std::filesystem::path& log) { return replay_log(log).session; }

struct SessionStore::Slot {
  std::shared_mutex mu;
  ReviewSession state;
  std::filesystem::path log;
};

SessionStore::SessionStore(StoreConfig cfg) : cfg_(std::move(cfg)) {
  if (!(cfg_.crop_padding >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "crop padding must be >= 0");
  }
  const auto dir = cfg_.root / "sessions";
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> logs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ndjson") {
      logs.push_back(entry.path());
    }
  }
  std::sort(logs.begin(), logs.end());
  for (const auto& path : logs) {
    ReplayResult r = replay_log(path);
    if (std::filesystem::file_size(path) != r.complete_bytes) {
      std::filesystem::resize_file(path, r.complete_bytes);
    }
    auto s = std::make_shared<Slot>();
    s->state = std::move(r.session);
    s->log = path;
    try {
      next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(s->state.id) + 1);
    } catch (const std::exception&) {
    }
    slots_.emplace(s->state.id, std::move(s));
  }
}

SessionStore::~SessionStore() = default;

std::filesystem::path SessionStore::log_path(const std::string& id) const {
  return cfg_.root / "sessions" / (id + ".ndjson");
}

std::int64_t SessionStore::now() const {
  if (cfg_.clock) return cfg_.clock();
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::shared_ptr<SessionStore::Slot> SessionStore::slot(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(id);
  if (it == slots_.end()) throw Error(ErrorCode::kNotFound, "no session '" + id + "'");
  return it->second;
}

Outcome SessionStore::create_session(const std::string& region,
                                     const std::filesystem::path& predictions) {
  const auto rit = std::find_if(cfg_.regions.begin(), cfg_.regions.end(),
                                [&](const Region& r) { return r.name == region; });
  if (rit == cfg_.regions.end()) throw Error(ErrorCode::kNotFound, "unknown region '" + region + "'");
  if (!std::filesystem::exists(predictions)) {
    throw Error(ErrorCode::kNotFound, "predictions file " + predictions.string() + " does not exist");
  }
  const auto insts = load_installations(predictions);
  std::vector<Candidate> candidates = region_candidates(insts, *rit);

  std::unique_lock lock(mu_);
  const std::string id = std::to_string(next_id_++);
  json cands = json::array();
  for (const auto& c : candidates) cands.push_back(candidate_to_json(c));
  const json e = {{"type", "created"},
                  {"session", id},
                  {"region", region},
                  {"predictions", predictions.string()},
                  {"candidates", std::move(cands)},
                  {"at", now()}};
  auto s = std::make_shared<Slot>();
  s->log = log_path(id);
  append_line(s->log, e.dump(), true);
  apply(s->state, e);
  slots_.emplace(id, s);
  Outcome out{s->state, {}};
  if (candidates.empty()) {
    out.warnings.push_back("region '" + region + "' has no predicted installations");
  }
  return out;
}

std::vector<ReviewSession> SessionStore::list() const {
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : slots_) slots.push_back(s);
  }
  std::vector<ReviewSession> out;
  for (const auto& s : slots) {
    std::shared_lock lock(s->mu);
    out.push_back(s->state);
  }
  std::sort(out.begin(), out.end(), [](const ReviewSession& a, const ReviewSession& b) {
    if (a.id.size() != b.id.size()) return a.id.size() < b.id.size();
    return a.id < b.id;
  });
  return out;
}

ReviewSession SessionStore::get(const std::string& id) const {
  auto s = slot(id);
  std::shared_lock lock(s->mu);
  return s->state;
}

CandidateView SessionStore::candidate(const std::string& id, std::size_t index) const {
  const ReviewSession s = get(id);
  if (s.status == SessionStatus::kClosed) {
    throw Error(ErrorCode::kState, "session '" + id + "' is closed");
  }
  if (index >= s.candidates.size()) {
    throw Error(ErrorCode::kRange, "candidate index " + std::to_string(index) +
                                       " is out of range for " +
                                       std::to_string(s.candidates.size()) + " candidates");
  }
  const Candidate& c = s.candidates[index];
  const Raster tile = load_tile(cfg_, c.installation.tile_id);
  const GeoTransform& g = tile.geo();

  const PixelPoint center = world_to_pixel(g, c.installation.centroid.x, c.installation.centroid.y);
  double reach_c = 0.0;
  double reach_r = 0.0;
  for (const auto& part : c.installation.outline) {
    for (const auto& v : part.exterior) {
      const PixelPoint p = world_to_pixel(g, v.x, v.y);
      reach_c = std::max(reach_c, std::abs(p.col - center.col));
      reach_r = std::max(reach_r, std::abs(p.row - center.row));
    }
  }
  const double pad_c = cfg_.crop_padding / std::hypot(g.dx, g.ry);
  const double pad_r = cfg_.crop_padding / std::hypot(g.rx, g.dy);
  const auto lo = [](double v, int limit) {
    return std::clamp(static_cast<int>(std::ceil(v)), 0, limit);
  };
  const auto hi = [](double v, int limit) {
    return std::clamp(static_cast<int>(std::floor(v)), 0, limit);
  };
  const int c0 = lo(center.col - reach_c - pad_c, tile.width() - 1);
  const int c1 = hi(center.col + reach_c + pad_c, tile.width() - 1);
  const int r0 = lo(center.row - reach_r - pad_r, tile.height() - 1);
  const int r1 = hi(center.row + reach_r + pad_r, tile.height() - 1);

  CandidateView v;
  v.index = index;
  v.candidate_id = c.id;
  v.tile_id = c.installation.tile_id;
  v.crop_col = c0;
  v.crop_row = r0;
  v.crop_width = c1 - c0 + 1;
  v.crop_height = r1 - r0 + 1;
  v.crop_geo = g;
  const WorldPoint origin = pixel_to_world(g, c0, r0);
  v.crop_geo.x0 = origin.x;
  v.crop_geo.y0 = origin.y;
  const auto to_image = [&](const Ring& ring) {
    PixelRing out;
    out.reserve(ring.size());
    for (const auto& w : ring) {
      const PixelPoint p = world_to_pixel(g, w.x, w.y);
      out.push_back({p.col - c0 + 0.5, p.row - r0 + 0.5});
    }
    return out;
  };
  for (const auto& part : c.installation.outline) {
    PixelPolygon pp{to_image(part.exterior), {}};
    for (const auto& h : part.holes) pp.holes.push_back(to_image(h));
    v.overlay.push_back(std::move(pp));
  }
  v.centroid = c.installation.centroid;
  v.area = c.installation.area;
  if (auto it = s.decisions.find(c.id); it != s.decisions.end()) v.decision = it->second;
  return v;
}

std::vector<std::uint8_t> SessionStore::crop_png(const std::string& id, std::size_t index) const {
  const CandidateView v = candidate(id, index);
  const Raster tile = load_tile(cfg_, v.tile_id);
  return encode_png(tile, v.crop_col, v.crop_row, v.crop_width, v.crop_height);
}

ReviewSession SessionStore::post_verdict(const std::string& id, const std::string& candidate_id,
                                         VerdictLabel label, const std::string& note) {
  if (label == VerdictLabel::kMissed) {
    throw Error(ErrorCode::kInvalidArgument,
                "candidates take 'correct' or 'false'; record missed arrays as missed marks");
  }
  auto s = slot(id);
  std::unique_lock lock(s->mu, std::try_to_lock);
  if (!lock) throw Error(ErrorCode::kConflict, "session '" + id + "' is being written by another client");
  if (s->state.status == SessionStatus::kClosed) {
    throw Error(ErrorCode::kState, "session '" + id + "' is closed");
  }
  if (!find_candidate(s->state, candidate_id)) {
    throw Error(ErrorCode::kNotFound, "session '" + id + "' has no candidate '" + candidate_id + "'");
  }
  if (s->state.decisions.count(candidate_id)) {
    throw Error(ErrorCode::kDuplicate,
                "candidate '" + candidate_id + "' already has a verdict; amend it instead");
  }
  const json e = {{"type", "verdict"},
                  {"candidate", candidate_id},
                  {"label", to_string(label)},
                  {"note", note},
                  {"at", now()}};
  append_line(s->log, e.dump(), false);
  apply(s->state, e);
  return s->state;
}

ReviewSession SessionStore::amend(const std::string& id, const std::string& candidate_id,
                                  VerdictLabel label, const std::string& note) {
  if (label == VerdictLabel::kMissed) {
    throw Error(ErrorCode::kInvalidArgument, "candidates take 'correct' or 'false'");
  }
  auto s = slot(id);
  std::unique_lock lock(s->mu, std::try_to_lock);
  if (!lock) throw Error(ErrorCode::kConflict, "session '" + id + "' is being written by another client");
  if (s->state.status == SessionStatus::kClosed) {
    throw Error(ErrorCode::kState, "session '" + id + "' is closed");
  }
  if (!s->state.decisions.count(candidate_id)) {
    throw Error(ErrorCode::kNotFound, "candidate '" + candidate_id + "' has no verdict to amend");
  }
  const json e = {{"type", "amend"},
                  {"candidate", candidate_id},
                  {"label", to_string(label)},
                  {"note", note},
                  {"at", now()}};
  append_line(s->log, e.dump(), false);
  apply(s->state, e);
  return s->state;
}

Outcome SessionStore::add_missed(const std::string& id, MissedMark mark) {
  if (mark.point.has_value() == mark.outline.has_value()) {
    throw Error(ErrorCode::kInvalidArgument, "a missed mark needs exactly one of point or outline");
  }
  if (mark.outline) validate_polygon(*mark.outline);
  auto s = slot(id);
  std::unique_lock lock(s->mu, std::try_to_lock);
  if (!lock) throw Error(ErrorCode::kConflict, "session '" + id + "' is being written by another client");
  if (s->state.status == SessionStatus::kClosed) {
    throw Error(ErrorCode::kState, "session '" + id + "' is closed");
  }
  mark.possible_duplicates.clear();
  for (const auto& c : s->state.candidates) {
    if (mark_hits(mark, c)) mark.possible_duplicates.push_back(c.id);
  }
  mark.at = now();
  const json e = {{"type", "missed"}, {"mark", mark_to_json(mark)}, {"at", mark.at}};
  append_line(s->log, e.dump(), false);
  apply(s->state, e);
  Outcome out{s->state, {}};
  for (const auto& cid : mark.possible_duplicates) {
    out.warnings.push_back("missed mark lies inside candidate '" + cid + "'; possible duplicate");
  }
  return out;
}

ReviewSession SessionStore::close(const std::string& id) {
  auto s = slot(id);
  std::unique_lock lock(s->mu, std::try_to_lock);
  if (!lock) throw Error(ErrorCode::kConflict, "session '" + id + "' is being written by another client");
  if (s->state.status == SessionStatus::kClosed) {
    throw Error(ErrorCode::kState, "session '" + id + "' is already closed");
  }
  const json e = {{"type", "closed"}, {"at", now()}};
  append_line(s->log, e.dump(), false);
  apply(s->state, e);
  return s->state;
}

InspectionScore SessionStore::metrics(const std::string& id) const {
  const ReviewSession s = get(id);
  const auto ids = s.candidate_ids();
  return inspection_score(s.verdicts(), ids);
}

std::vector<std::uint8_t> encode_png(const Raster& rgb, int col, int row, int width, int height) {
  if (!rgb.is_rgb()) throw Error(ErrorCode::kInvalidArgument, "PNG crops need an RGB raster");
  if (width <= 0 || height <= 0 || col < 0 || row < 0 || col + width > rgb.width() ||
      row + height > rgb.height()) {
    throw Error(ErrorCode::kRange, "crop rectangle lies outside the raster");
  }
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * 3);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (int b = 0; b < 3; ++b) {
        const double v = std::clamp(rgb.intensity(col + c, row + r, b), 0.0, 1.0);
        pixels[(static_cast<std::size_t>(r) * width + c) * 3 + b] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::kIo, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::kIo, "png_create_info_struct failed");
  }
  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        buf->insert(buf->end(), data, data + n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::string to_json(const ReviewSession& s) {
  json cands = json::array();
  for (std::size_t i = 0; i < s.candidates.size(); ++i) {
    const auto& c = s.candidates[i];
    json j = {{"index", i},
              {"id", c.id},
              {"tile_id", c.installation.tile_id},
              {"area_m2", c.installation.area},
              {"centroid", detail::point_to_json(c.installation.centroid)}};
    auto it = s.decisions.find(c.id);
    j["verdict"] = it == s.decisions.end() ? json(nullptr) : decision_json(it->second);
    cands.push_back(std::move(j));
  }
  json missed = json::array();
  for (const auto& m : s.missed) missed.push_back(mark_to_json(m));
  json amendments = json::array();
  for (const auto& a : s.amendments) {
    amendments.push_back({{"candidate", a.candidate_id},
                          {"previous", to_string(a.previous)},
                          {"label", to_string(a.label)},
                          {"note", a.note},
                          {"at", a.at}});
  }
  std::size_t correct = 0;
  std::size_t wrong = 0;
  for (const auto& [id, d] : s.decisions) (d.label == VerdictLabel::kCorrect ? correct : wrong)++;
  const auto next = s.first_undecided();
  const json j = {{"id", s.id},
                  {"region", s.region},
                  {"predictions", s.predictions},
                  {"status", to_string(s.status)},
                  {"created_at", s.created_at},
                  {"updated_at", s.updated_at},
                  {"empty_predictions", s.empty_predictions()},
                  {"next_undecided", next ? json(*next) : json(nullptr)},
                  {"tally",
                   {{"correct", correct},
                    {"false", wrong},
                    {"missed", s.missed.size()},
                    {"undecided", s.candidates.size() - s.decisions.size()}}},
                  {"candidates", std::move(cands)},
                  {"missed", std::move(missed)},
                  {"amendments", std::move(amendments)}};
  return j.dump(2);
}

std::string to_json(const CandidateView& v) {
  const auto ring = [](const PixelRing& r) {
    json out = json::array();
    for (const auto& p : r) out.push_back(json::array({p.col, p.row}));
    return out;
  };
  json overlay = json::array();
  for (const auto& p : v.overlay) {
    json holes = json::array();
    for (const auto& h : p.holes) holes.push_back(ring(h));
    overlay.push_back({{"exterior", ring(p.exterior)}, {"holes", std::move(holes)}});
  }
  const GeoTransform& g = v.crop_geo;
  const json j = {
      {"index", v.index},
      {"id", v.candidate_id},
      {"tile_id", v.tile_id},
      {"crop",
       {{"col", v.crop_col}, {"row", v.crop_row}, {"width", v.crop_width}, {"height", v.crop_height}}},
      {"crop_geotransform",
       {{"x0", g.x0}, {"y0", g.y0}, {"dx", g.dx}, {"dy", g.dy}, {"rx", g.rx}, {"ry", g.ry},
        {"crs", g.crs}}},
      {"overlay", std::move(overlay)},
      {"centroid", detail::point_to_json(v.centroid)},
      {"area_m2", v.area},
      {"verdict", v.decision ? decision_json(*v.decision) : json(nullptr)}};
  return j.dump(2);
}

}  // namespace solarmap::review
