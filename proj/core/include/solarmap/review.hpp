#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solarmap/installations.hpp"
#include "solarmap/metrics.hpp"
#include "solarmap/raster.hpp"
#include "solarmap/vector.hpp"

namespace solarmap::review {

enum class SessionStatus { kOpen, kClosed };

/// How the inspector found a missed array: while stepping through the
/// candidate queue, or by browsing the tile freely.
enum class MissedMode { kQueue, kBrowse };

std::string to_string(SessionStatus s);
std::string to_string(MissedMode m);
MissedMode missed_mode_from_string(const std::string& s);

struct Candidate {
  std::string id;
  /// Geometry, centroid and area only; pixels are not kept.
  Installation installation;
};

struct Decision {
  VerdictLabel label = VerdictLabel::kCorrect;
  std::string note;
  std::int64_t at = 0;
};

struct Amendment {
  std::string candidate_id;
  VerdictLabel previous = VerdictLabel::kCorrect;
  VerdictLabel label = VerdictLabel::kCorrect;
  std::string note;
  std::int64_t at = 0;
};

/// A point or a rough outline in world coordinates; exactly one is set.
struct MissedMark {
  std::optional<WorldPoint> point;
  std::optional<Polygon> outline;
  MissedMode mode = MissedMode::kQueue;
  std::string note;
  /// Candidates whose outline already covers the mark.
  std::vector<std::string> possible_duplicates;
  std::int64_t at = 0;
};

struct ReviewSession {
  std::string id;
  std::string region;
  std::string predictions;
  /// Ordered by tile id, then installation id.
  std::vector<Candidate> candidates;
  std::map<std::string, Decision> decisions;
  std::vector<MissedMark> missed;
  std::vector<Amendment> amendments;
  SessionStatus status = SessionStatus::kOpen;
  std::int64_t created_at = 0;
  std::int64_t updated_at = 0;

  bool empty_predictions() const { return candidates.empty(); }
  std::optional<std::size_t> first_undecided() const;
  std::vector<std::string> candidate_ids() const;
  /// Candidate decisions plus one kMissed entry per missed mark.
  std::vector<Verdict> verdicts() const;
};

using PixelRing = std::vector<PixelPoint>;

struct PixelPolygon {
  PixelRing exterior;
  std::vector<PixelRing> holes;
};

/// Metadata for one candidate crop. Overlay coordinates are image
/// coordinates of the crop: the top-left corner of its first pixel is (0, 0)
/// and pixel centers sit at half-integers.
struct CandidateView {
  std::size_t index = 0;
  std::string candidate_id;
  std::string tile_id;
  int crop_col = 0;
  int crop_row = 0;
  int crop_width = 0;
  int crop_height = 0;
  /// Maps crop pixel indices to world coordinates.
  GeoTransform crop_geo;
  std::vector<PixelPolygon> overlay;
  WorldPoint centroid;
  double area = 0.0;
  std::optional<Decision> decision;
};

struct StoreConfig {
  /// Session logs live in <root>/sessions/<id>.ndjson.
  std::filesystem::path root;
  /// Imagery is read from <tiles_dir>/<tile_id>.sarf.
  std::filesystem::path tiles_dir;
  std::vector<Region> regions;
  /// m of context around each candidate.
  double crop_padding = 20.0;
  /// Milliseconds since the epoch; the system clock when empty.
  std::function<std::int64_t()> clock;
};

struct Outcome {
  ReviewSession session;
  std::vector<std::string> warnings;
};

/// Event-sourced store of review sessions. Every change is appended to the
/// session's log and synced before it becomes visible. Writes to one session
/// are serialized; a write that finds the session busy fails with
/// Error(kConflict).
class SessionStore {
 public:
  /// Replays every session log under the root.
  explicit SessionStore(StoreConfig cfg);
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  /// Candidates are the installations whose centroid lies in the region.
  Outcome create_session(const std::string& region, const std::filesystem::path& predictions);
  std::vector<ReviewSession> list() const;
  ReviewSession get(const std::string& id) const;

  CandidateView candidate(const std::string& id, std::size_t index) const;
  /// PNG-encoded crop described by candidate().
  std::vector<std::uint8_t> crop_png(const std::string& id, std::size_t index) const;

  /// Rejects a second decision for the same candidate.
  ReviewSession post_verdict(const std::string& id, const std::string& candidate_id,
                             VerdictLabel label, const std::string& note = {});
  /// Replaces an existing decision and records the change.
  ReviewSession amend(const std::string& id, const std::string& candidate_id,
                      VerdictLabel label, const std::string& note = {});
  /// Warns, but still records, when the mark falls inside a candidate.
  Outcome add_missed(const std::string& id, MissedMark mark);
  ReviewSession close(const std::string& id);

  /// Delegates to inspection_score; throws Error(kState) while candidates
  /// remain undecided.
  InspectionScore metrics(const std::string& id) const;

  const StoreConfig& config() const { return cfg_; }
  std::filesystem::path log_path(const std::string& id) const;

 private:
  struct Slot;
  std::shared_ptr<Slot> slot(const std::string& id) const;
  std::int64_t now() const;

  StoreConfig cfg_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
  std::uint64_t next_id_ = 1;
};

/// Rebuilds a session from its log. A trailing line without its newline is
/// an interrupted write and is ignored.
ReviewSession replay(const std::filesystem::path& log);

/// The candidate list of a region, as create_session would queue it.
std::vector<Candidate> region_candidates(std::span<const Installation> predictions,
                                         const Region& region);

/// 8-bit RGB PNG of a sub-rectangle of an RGB raster.
std::vector<std::uint8_t> encode_png(const Raster& rgb, int col, int row, int width, int height);

std::string to_json(const ReviewSession& s);
std::string to_json(const CandidateView& v);

}  // namespace solarmap::review
