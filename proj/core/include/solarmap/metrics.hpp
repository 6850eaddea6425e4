#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solarmap/installations.hpp"
#include "solarmap/raster.hpp"
#include "solarmap/segmenter.hpp"

namespace solarmap {

/// Pixel-level agreement of a predicted and a true mask. Counts are kept so
/// scores can be pooled across tiles and folds.
struct PixelScore {
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;
  std::uint64_t predicted_count = 0;
  std::uint64_t truth_count = 0;
  /// intersection / union; 1.0 when both masks are empty (see both_empty).
  double iou = 1.0;
  bool both_empty = true;

  static PixelScore from_counts(std::uint64_t intersection, std::uint64_t predicted,
                                std::uint64_t truth);
  /// Micro-pooling: adds counts and recomputes iou.
  PixelScore& operator+=(const PixelScore& other);
};

PixelScore pixel_iou(const Raster& pred, const Raster& truth);

struct MatchedPair {
  int pred_id = 0;
  int truth_id = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MatchedPair> correct;
  std::vector<int> false_detections;
  std::vector<int> missed;
  double iou_min = 0.5;
};

/// IOU of two installations' pixel sets.
double installation_iou(const Installation& a, const Installation& b);

/// One-to-one greedy matching in descending IOU over pairs with IOU >= iou_min
/// and a non-empty overlap. Ties go to the lower pred id, then the lower
/// truth id.
MatchResult match_objects(std::span<const Installation> preds,
                          std::span<const Installation> truths, double iou_min = 0.5);

struct DetectionCounts {
  std::uint64_t correct = 0;
  std::uint64_t false_detections = 0;
  std::uint64_t missed = 0;

  static DetectionCounts from(const MatchResult& m);
  DetectionCounts& operator+=(const DetectionCounts& other);
  bool operator==(const DetectionCounts&) const = default;
};

/// Undefined ratios are std::nullopt, never 0.
struct PRF {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  DetectionCounts counts;
};

/// Harmonic mean; undefined when p + r == 0.
std::optional<double> f1(double precision, double recall);
PRF prf(const DetectionCounts& counts);
PRF prf(const MatchResult& m);

enum class VerdictLabel { kCorrect, kFalse, kMissed };

std::string to_string(VerdictLabel label);
VerdictLabel verdict_label_from_string(const std::string& s);

/// An inspector's decision. Missed entries carry no candidate id.
struct Verdict {
  std::string candidate_id;
  VerdictLabel label = VerdictLabel::kCorrect;
  std::string note;
};

/// Scores from visual inspection: a prediction counts as correct when it
/// overlaps any real array at all, with no IOU minimum.
struct InspectionScore {
  PRF prf;
  std::string criterion = "overlap";
};

/// Every candidate must have exactly one correct/false verdict.
InspectionScore inspection_score(std::span<const Verdict> verdicts,
                                 std::span<const std::string> candidate_ids);
/// As above, with the candidate set taken from the verdicts themselves.
InspectionScore inspection_score(std::span<const Verdict> verdicts);

struct TileScore {
  std::string tile_id;
  PixelScore pixel;
  MatchResult objects;
};

/// Extracts installations from both masks with the same options and scores
/// them at pixel and object level.
TileScore score_tile(const Raster& pred_mask, const Raster& truth_mask,
                     const ExtractOptions& extract, double iou_min);

struct ScoreReport {
  std::vector<TileScore> tiles;
  PixelScore pixel;
  DetectionCounts objects;
};

ScoreReport summarize(std::vector<TileScore> tiles);

struct CrossValConfig {
  int folds = 2;
  std::uint64_t seed = 0;
  TrainConfig train;
  PixelFeatureSpec features;
  double threshold = 0.5;
  ExtractOptions extract;
  double iou_min = 0.5;
  /// Folds evaluated concurrently; results do not depend on it.
  int workers = 1;
};

struct FoldResult {
  int fold = 0;
  std::vector<std::size_t> train_tiles;
  std::vector<std::size_t> eval_tiles;
  ScoreReport score;
  double final_loss = 0.0;
};

struct CrossValResult {
  std::vector<FoldResult> folds;
  PixelScore pixel;
  DetectionCounts objects;
};

/// Seeded shuffle of [0, n) cut into k contiguous, near-equal folds.
std::vector<std::vector<std::size_t>> fold_assignment(std::size_t n, int k,
                                                      std::uint64_t seed);

CrossValResult crossval(std::span<const LabeledTile> tiles, const CrossValConfig& cfg);

std::string to_json(const ScoreReport& report);
std::string to_json(const CrossValResult& result);
std::string to_json(const InspectionScore& score);

}  // namespace solarmap
