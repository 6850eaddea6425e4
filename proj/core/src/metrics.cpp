#include "solarmap/metrics.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "report_json.hpp"
#include "solarmap/error.hpp"
#include "solarmap/parallel.hpp"

namespace solarmap {

namespace {

using detail::json;

void require_congruent(const Raster& a, const Raster& b) {
  if (!a.is_mask() || !b.is_mask()) {
    throw Error(ErrorCode::kInvalidArgument, "pixel_iou expects two binary masks");
  }
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorCode::kSizeMismatch,
                "mask dimensions differ: " + std::to_string(a.width()) + "x" +
                    std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                    std::to_string(b.height()));
  }
}

void require_unique_ids(std::span<const Installation> insts, const char* what) {
  std::set<int> seen;
  for (const auto& i : insts) {
    if (!seen.insert(i.id).second) {
      throw Error(ErrorCode::kDuplicate,
                  std::string("duplicate ") + what + " id " + std::to_string(i.id));
    }
  }
}

struct Box {
  int c0, c1, r0, r1;
};

Box bounds(const Installation& inst) {
  Box b{inst.pixels.front().col, inst.pixels.front().col, inst.pixels.front().row,
        inst.pixels.back().row};
  for (const auto& p : inst.pixels) {
    b.c0 = std::min(b.c0, p.col);
    b.c1 = std::max(b.c1, p.col);
  }
  return b;
}

bool overlaps(const Box& a, const Box& b) {
  return a.c0 <= b.c1 && b.c0 <= a.c1 && a.r0 <= b.r1 && b.r0 <= a.r1;
}

std::uint64_t intersection_size(const Installation& a, const Installation& b) {
  std::uint64_t n = 0;
  auto i = a.pixels.begin();
  auto j = b.pixels.begin();
  while (i != a.pixels.end() && j != b.pixels.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  // Rejection sampling on the raw engine output, portable across standard
  // libraries.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

}  // namespace

PixelScore PixelScore::from_counts(std::uint64_t intersection, std::uint64_t predicted,
                                   std::uint64_t truth) {
  PixelScore s;
  s.intersection = intersection;
  s.predicted_count = predicted;
  s.truth_count = truth;
  s.union_count = predicted + truth - intersection;
  s.both_empty = s.union_count == 0;
  s.iou = s.both_empty ? 1.0
                       : static_cast<double>(intersection) / static_cast<double>(s.union_count);
  return s;
}

PixelScore& PixelScore::operator+=(const PixelScore& other) {
  *this = from_counts(intersection + other.intersection, predicted_count + other.predicted_count,
                      truth_count + other.truth_count);
  return *this;
}

PixelScore pixel_iou(const Raster& pred, const Raster& truth) {
  require_congruent(pred, truth);
  std::uint64_t inter = 0, p = 0, t = 0;
  auto a = pred.u8();
  auto b = truth.u8();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    p += x;
    t += y;
    inter += x && y;
  }
  return PixelScore::from_counts(inter, p, t);
}

double installation_iou(const Installation& a, const Installation& b) {
  const std::uint64_t inter = intersection_size(a, b);
  const std::uint64_t uni = a.pixels.size() + b.pixels.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MatchResult match_objects(std::span<const Installation> preds,
                          std::span<const Installation> truths, double iou_min) {
  require_unique_ids(preds, "prediction");
  require_unique_ids(truths, "truth");
  if (!(iou_min >= 0.0 && iou_min <= 1.0)) {
    throw Error(ErrorCode::kRange, "iou_min must lie in [0, 1]");
  }
  auto require_pixels = [](std::span<const Installation> s) {
    for (const auto& i : s) {
      if (i.pixels.empty()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "installation " + feature_id(i) + " has no pixel set to match on");
      }
    }
  };
  require_pixels(preds);
  require_pixels(truths);

  std::vector<Box> truth_boxes;
  truth_boxes.reserve(truths.size());
  for (const auto& t : truths) truth_boxes.push_back(bounds(t));

  struct Candidate {
    double iou;
    int pred_id;
    int truth_id;
    std::size_t p;
    std::size_t t;
  };
  std::vector<Candidate> cands;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    const Box pb = bounds(preds[p]);
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (!overlaps(pb, truth_boxes[t])) continue;
      const std::uint64_t inter = intersection_size(preds[p], truths[t]);
      if (inter == 0) continue;
      const std::uint64_t uni = preds[p].pixels.size() + truths[t].pixels.size() - inter;
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      if (iou >= iou_min) cands.push_back({iou, preds[p].id, truths[t].id, p, t});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pred_id != b.pred_id) return a.pred_id < b.pred_id;
    return a.truth_id < b.truth_id;
  });

  MatchResult out;
  out.iou_min = iou_min;
  std::vector<bool> pred_used(preds.size(), false);
  std::vector<bool> truth_used(truths.size(), false);
  for (const auto& c : cands) {
    if (pred_used[c.p] || truth_used[c.t]) continue;
    pred_used[c.p] = true;
    truth_used[c.t] = true;
    out.correct.push_back({c.pred_id, c.truth_id, c.iou});
  }
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (!pred_used[p]) out.false_detections.push_back(preds[p].id);
  }
  for (std::size_t t = 0; t < truths.size(); ++t) {
    if (!truth_used[t]) out.missed.push_back(truths[t].id);
  }
  return out;
}

DetectionCounts DetectionCounts::from(const MatchResult& m) {
  return {m.correct.size(), m.false_detections.size(), m.missed.size()};
}

DetectionCounts& DetectionCounts::operator+=(const DetectionCounts& other) {
  correct += other.correct;
  false_detections += other.false_detections;
  missed += other.missed;
  return *this;
}

std::optional<double> f1(double precision, double recall) {
  if (!(precision + recall > 0.0)) return std::nullopt;
  return 2.0 * precision * recall / (precision + recall);
}

PRF prf(const DetectionCounts& counts) {
  PRF out;
  out.counts = counts;
  const double tp = static_cast<double>(counts.correct);
  if (counts.correct + counts.false_detections > 0) {
    out.precision = tp / static_cast<double>(counts.correct + counts.false_detections);
  }
  if (counts.correct + counts.missed > 0) {
    out.recall = tp / static_cast<double>(counts.correct + counts.missed);
  }
  if (out.precision && out.recall) out.f1 = f1(*out.precision, *out.recall);
  return out;
}

PRF prf(const MatchResult& m) { return prf(DetectionCounts::from(m)); }

std::string to_string(VerdictLabel label) {
  switch (label) {
    case VerdictLabel::kCorrect: return "correct";
    case VerdictLabel::kFalse: return "false";
    case VerdictLabel::kMissed: return "missed";
  }
  return "unknown";
}

VerdictLabel verdict_label_from_string(const std::string& s) {
  if (s == "correct") return VerdictLabel::kCorrect;
  if (s == "false") return VerdictLabel::kFalse;
  if (s == "missed") return VerdictLabel::kMissed;
  throw Error(ErrorCode::kInvalidArgument,
              "verdict label must be correct, false or missed; got '" + s + "'");
}

InspectionScore inspection_score(std::span<const Verdict> verdicts,
                                 std::span<const std::string> candidate_ids) {
  std::map<std::string, int> decided;
  for (const auto& id : candidate_ids) {
    if (!decided.emplace(id, 0).second) {
      throw Error(ErrorCode::kDuplicate, "candidate '" + id + "' listed twice");
    }
  }
  DetectionCounts counts;
  for (const auto& v : verdicts) {
    if (v.label == VerdictLabel::kMissed) {
      ++counts.missed;
      continue;
    }
    auto it = decided.find(v.candidate_id);
    if (it == decided.end()) {
      throw Error(ErrorCode::kNotFound,
                  "verdict for unknown candidate '" + v.candidate_id + "'");
    }
    if (++it->second > 1) {
      throw Error(ErrorCode::kConflict,
                  "candidate '" + v.candidate_id + "' has more than one verdict");
    }
    if (v.label == VerdictLabel::kCorrect) {
      ++counts.correct;
    } else {
      ++counts.false_detections;
    }
  }
  for (const auto& [id, n] : decided) {
    if (n == 0) throw Error(ErrorCode::kState, "candidate '" + id + "' has no verdict");
  }
  return {prf(counts), "overlap"};
}

InspectionScore inspection_score(std::span<const Verdict> verdicts) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& v : verdicts) {
    if (v.label != VerdictLabel::kMissed && seen.insert(v.candidate_id).second) {
      ids.push_back(v.candidate_id);
    }
  }
  return inspection_score(verdicts, ids);
}

TileScore score_tile(const Raster& pred_mask, const Raster& truth_mask,
                     const ExtractOptions& extract, double iou_min) {
  TileScore s;
  s.tile_id = truth_mask.tile_id().empty() ? pred_mask.tile_id() : truth_mask.tile_id();
  s.pixel = pixel_iou(pred_mask, truth_mask);
  const auto preds = extract_installations(pred_mask, extract);
  const auto truths = extract_installations(truth_mask, extract);
  s.objects = match_objects(preds, truths, iou_min);
  return s;
}

ScoreReport summarize(std::vector<TileScore> tiles) {
  ScoreReport r;
  r.pixel = PixelScore::from_counts(0, 0, 0);
  for (const auto& t : tiles) {
    r.pixel += t.pixel;
    r.objects += DetectionCounts::from(t.objects);
  }
  r.tiles = std::move(tiles);
  return r;
}

std::vector<std::vector<std::size_t>> fold_assignment(std::size_t n, int k,
                                                      std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::kInvalidArgument, "cross-validation needs k >= 2 folds");
  if (n < static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::kInvalidArgument, "cross-validation needs at least " +
                                                 std::to_string(k) + " tiles, got " +
                                                 std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[uniform_below(rng, i + 1)]);
  }
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    const std::size_t begin = n * static_cast<std::size_t>(f) / k;
    const std::size_t end = n * static_cast<std::size_t>(f + 1) / k;
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                    order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return folds;
}

CrossValResult crossval(std::span<const LabeledTile> tiles, const CrossValConfig& cfg) {
  const auto folds = fold_assignment(tiles.size(), cfg.folds, cfg.seed);
  CrossValResult result;
  result.folds.resize(folds.size());

  parallel_for(folds.size(), cfg.workers, [&](std::size_t f) {
    FoldResult& fold = result.folds[f];
    fold.fold = static_cast<int>(f);
    fold.eval_tiles = folds[f];
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) fold.train_tiles.insert(fold.train_tiles.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(fold.train_tiles.begin(), fold.train_tiles.end());

    std::vector<const LabeledTile*> train_ptrs;
    for (std::size_t i : fold.train_tiles) train_ptrs.push_back(&tiles[i]);
    const TrainingSet data = TrainingSet::from_tiles(
        std::span<const LabeledTile* const>(train_ptrs), cfg.features, cfg.train.workers);
    const SegmenterModel model = train(data, cfg.train);
    fold.final_loss = model.train_log.empty() ? 0.0 : model.train_log.back();

    std::vector<TileScore> scores;
    for (std::size_t i : fold.eval_tiles) {
      const Raster conf = infer(model, tiles[i].image, cfg.train.workers);
      const Raster pred = threshold(conf, cfg.threshold);
      TileScore s = score_tile(pred, tiles[i].mask, cfg.extract, cfg.iou_min);
      if (s.tile_id.empty()) s.tile_id = std::to_string(i);
      scores.push_back(std::move(s));
    }
    fold.score = summarize(std::move(scores));
  });

  result.pixel = PixelScore::from_counts(0, 0, 0);
  for (const auto& fold : result.folds) {
    result.pixel += fold.score.pixel;
    result.objects += fold.score.objects;
  }
  return result;
}

namespace detail {

json pixel_score_json(const PixelScore& s) {
  return {{"intersection", s.intersection}, {"union", s.union_count},
          {"predicted", s.predicted_count}, {"truth", s.truth_count},
          {"iou", s.iou},                   {"both_empty", s.both_empty}};
}

json match_result_json(const MatchResult& m) {
  json correct = json::array();
  for (const auto& c : m.correct) {
    correct.push_back({{"pred_id", c.pred_id}, {"truth_id", c.truth_id}, {"iou", c.iou}});
  }
  return {{"iou_min", m.iou_min},
          {"correct", std::move(correct)},
          {"false_detections", m.false_detections},
          {"missed", m.missed}};
}

json counts_json(const DetectionCounts& c) {
  return {{"correct", c.correct}, {"false_detections", c.false_detections}, {"missed", c.missed}};
}

json prf_json(const PRF& p) {
  return {{"precision", optional_number(p.precision)},
          {"recall", optional_number(p.recall)},
          {"f1", optional_number(p.f1)},
          {"counts", counts_json(p.counts)}};
}

}  // namespace detail

namespace {

json score_report_json(const ScoreReport& r) {
  json tiles = json::array();
  for (const auto& t : r.tiles) {
    tiles.push_back({{"tile_id", t.tile_id},
                     {"pixel", detail::pixel_score_json(t.pixel)},
                     {"objects", detail::match_result_json(t.objects)}});
  }
  return {{"tiles", std::move(tiles)},
          {"aggregate",
           {{"pixel", detail::pixel_score_json(r.pixel)},
            {"objects", detail::prf_json(prf(r.objects))}}}};
}

}  // namespace

std::string to_json(const ScoreReport& report) { return score_report_json(report).dump(2); }

std::string to_json(const CrossValResult& result) {
  json folds = json::array();
  for (const auto& f : result.folds) {
    json block = score_report_json(f.score);
    block["fold"] = f.fold;
    block["train_tiles"] = f.train_tiles;
    block["eval_tiles"] = f.eval_tiles;
    block["final_loss"] = f.final_loss;
    folds.push_back(std::move(block));
  }
  json j = {{"folds", std::move(folds)},
            {"aggregate",
             {{"pixel", detail::pixel_score_json(result.pixel)},
              {"objects", detail::prf_json(prf(result.objects))}}}};
  return j.dump(2);
}

std::string to_json(const InspectionScore& score) {
  json j = detail::prf_json(score.prf);
  j["criterion"] = score.criterion;
  return j.dump(2);
}

}  // namespace solarmap
