// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "oracles.hpp"
#include "pipeline.hpp"
#include "solarmap/capacity.hpp"
#include "solarmap/metrics.hpp"
#include "solarmap/segmenter.hpp"
#include "solarmap/synthetic.hpp"

namespace {

using namespace solarmap;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome f1_arithmetic() {
  const double a = *f1(0.91, 0.75);
  const double b = *f1(0.86, 0.88);
  const bool ok = std::abs(a - 0.82) <= 0.005 && std::abs(b - 0.87) <= 0.005;
  return {ok, "f1(0.91,0.75)=" + fmt("%.4f", a) + " f1(0.86,0.88)=" + fmt("%.4f", b)};
}

Outcome iou_oracle() {
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const int w = 1 + static_cast<int>(rng() % 32);
    const int h = 1 + static_cast<int>(rng() % 32);
    const double density = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const Raster a = oracle::random_mask(rng, w, h, density);
    const Raster b = oracle::random_mask(rng, w, h, density);
    const PixelScore got = pixel_iou(a, b);
    const auto want = oracle::set_iou(oracle::foreground(a), oracle::foreground(b));
    const double want_iou = want.union_count == 0
                                ? 1.0
                                : static_cast<double>(want.intersection) / want.union_count;
    if (got.intersection != want.intersection || got.union_count != want.union_count ||
        got.iou != want_iou) {
      ++mismatches;
    }
  }
  return {mismatches == 0, "200 pairs, " + std::to_string(mismatches) + " mismatches"};
}

std::vector<Installation> random_objects(std::mt19937_64& rng, int grid) {
  std::vector<Installation> out;
  const int n = static_cast<int>(rng() % 7);
  for (int i = 0; i < n; ++i) {
    const int sw = 1 + static_cast<int>(rng() % 3);
    const int sh = 1 + static_cast<int>(rng() % 3);
    const int c = static_cast<int>(rng() % (grid - sw + 1));
    const int r = static_cast<int>(rng() % (grid - sh + 1));
    Installation inst;
    inst.id = i + 1;
    for (int y = r; y < r + sh; ++y) {
      for (int x = c; x < c + sw; ++x) inst.pixels.push_back({x, y});
    }
    inst.pixel_count = inst.pixels.size();
    out.push_back(std::move(inst));
  }
  return out;
}

Outcome matching_oracle() {
  std::mt19937_64 rng(7);
  int count_errors = 0;
  int identity_errors = 0;
  int nontrivial = 0;
  for (int s = 0; s < 100; ++s) {
    const auto preds = random_objects(rng, 5);
    const auto truths = random_objects(rng, 5);
    const MatchResult m = match_objects(preds, truths, 0.5);
    std::vector<oracle::PixelSet> ps, ts;
    for (const auto& p : preds) ps.push_back(oracle::pixels(p));
    for (const auto& t : truths) ts.push_back(oracle::pixels(t));
    const std::size_t best = oracle::best_assignment(ps, ts, 0.5);
    if (best > 0) ++nontrivial;
    if (m.correct.size() != best) ++count_errors;
    if (m.correct.size() + m.false_detections.size() != preds.size() ||
        m.correct.size() + m.missed.size() != truths.size()) {
      ++identity_errors;
    }
  }
  return {count_errors == 0 && identity_errors == 0,
          "100 scenes (" + std::to_string(nontrivial) + " with matches), " +
              std::to_string(count_errors) + " count mismatches, " + std::to_string(identity_errors) +
              " identity violations"};
}

Outcome end_to_end() {
  const auto tiles = labeled_tiles(make_scene(SceneConfig{}, 64, 1));
  CrossValConfig cfg;
  cfg.folds = 2;
  cfg.seed = 1;
  cfg.workers = 1;
  cfg.train.workers = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const CrossValResult r = crossval(tiles, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const PRF p = prf(r.objects);
  const double f = p.f1.value_or(0.0);
  return {r.pixel.iou >= 0.9 && f >= 0.9 && secs < 60.0,
          "pixel IoU " + fmt("%.4f", r.pixel.iou) + ", object F1 " + fmt("%.4f", f) + ", " +
              fmt("%.1f", secs) + " s"};
}

double accuracy(const SegmenterModel& m, const std::vector<LabeledTile>& tiles) {
  std::size_t right = 0, total = 0;
  for (const auto& t : tiles) {
    const Raster pred = threshold(infer(m, t.image), 0.5);
    for (std::size_t i = 0; i < pred.u8().size(); ++i) right += pred.u8()[i] == t.mask.u8()[i];
    total += pred.u8().size();
  }
  return static_cast<double>(right) / total;
}

Outcome finetune_benefit() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto source = labeled_tiles(make_scene(SceneConfig{}, 10, 101));
  SceneConfig shifted;
  shifted.style = shifted_style();
  // The adaptation set has one tile for every ten source tiles; evaluation
  // uses shifted tiles from an independent seed.
  const auto adapt = labeled_tiles(make_scene(shifted, 1, 202));
  const auto eval = labeled_tiles(make_scene(shifted, 8, 303));
  TrainConfig cfg;
  const SegmenterModel base = train(source, cfg);
  const SegmenterModel tuned = finetune(base, adapt, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double before = accuracy(base, eval);
  const double after = accuracy(tuned, eval);
  return {after > before && secs < 30.0,
          "shifted accuracy " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) + ", " +
              fmt("%.1f", secs) + " s"};
}

Installation array_at(int id, WorldPoint c, double area, std::optional<Color> color = {}) {
  Installation i;
  i.id = id;
  i.tile_id = "g";
  i.centroid = c;
  i.area = area;
  i.mean_color = color;
  return i;
}

Outcome gamma_recovery() {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Installation> arrays;
  double known = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = 5.0 + 95.0 * u(rng);
    known += 0.15 * a;
    arrays.push_back(array_at(i + 1, {50.0, 50.0}, a * (0.95 + 0.1 * u(rng))));
  }
  const double g = calibrate_fixed(arrays, known).gamma;
  const double rel = std::abs(g - 0.15) / 0.15;

  const Color w{0.04, -0.03, 0.02};
  const double b = 0.12;
  std::vector<CapacitySample> samples;
  for (int i = 0; i < 40; ++i) {
    CapacitySample s;
    s.mean_color = {u(rng), u(rng), u(rng)};
    s.area = 5.0 + 50.0 * u(rng);
    s.capacity = (w[0] * s.mean_color[0] + w[1] * s.mean_color[1] + w[2] * s.mean_color[2] + b) * s.area;
    samples.push_back(s);
  }
  const CapacityModel cm = fit_color_model(samples);
  double coef_err = std::abs(cm.intercept - b);
  for (int k = 0; k < 3; ++k) coef_err = std::max(coef_err, std::abs(cm.color_weights[k] - w[k]));

  Region r;
  r.name = "calibration";
  r.boundary = make_polygon({{0, 0}, {100, 0}, {100, 100}, {0, 100}});
  const std::vector<Region> regions{r};
  const double reported = 987.65;
  const CapacityModel m = calibrate_fixed(arrays, reported, "calibration");
  const double total = aggregate(arrays, regions, m).per_region[0].estimated_kw;
  const double ident = std::abs(total - reported) / reported;

  return {rel <= 0.05 && coef_err <= 1e-9 && ident <= 1e-9,
          "gamma rel err " + fmt("%.2e", rel) + ", color coef err " + fmt("%.2e", coef_err) +
              ", calibration identity rel err " + fmt("%.2e", ident)};
}

Outcome pearson_properties() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(50), affine(50), y(50);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = n(rng);
    affine[i] = 3.5 * x[i] - 2.0;
    y[i] = x[i] + n(rng);
  }
  const double r_affine = *pearson(x, affine);
  const double r = *pearson(x, y);
  double inv_err = 0.0;
  for (double a : {0.01, 2.0, 1e4}) {
    std::vector<double> sx, sy;
    for (double v : x) sx.push_back(a * v + 5.0);
    for (double v : y) sy.push_back(a * v - 7.0);
    inv_err = std::max(inv_err, std::abs(*pearson(sx, y) - r));
    inv_err = std::max(inv_err, std::abs(*pearson(x, sy) - r));
  }
  const std::vector<double> px{1, 2, 3, 4, 5};
  const std::vector<double> py{2, 1, 4, 3, 6};
  const double oracle_err = std::abs(*pearson(px, py) - oracle::pearson(px, py));
  return {std::abs(r_affine - 1.0) <= 1e-9 && inv_err <= 1e-12 && oracle_err <= 1e-12,
          "affine r-1 " + fmt("%.1e", r_affine - 1.0) + ", rescaling drift " + fmt("%.1e", inv_err) +
              ", oracle diff " + fmt("%.1e", oracle_err)};
}

Outcome outlier_flagging() {
  int wrong = 0;
  int cases = 0;
  for (int n : {4, 6, 10, 25}) {
    for (int k = 0; k < n; ++k) {
      CapacityReport rep;
      for (int i = 0; i < n; ++i) {
        RegionCapacity rc;
        rc.name = "R" + std::to_string(i);
        rc.estimated_kw = 20.0 + 13.0 * i;
        rc.reported_kw = 0.9 * rc.estimated_kw + 4.0;
        if (i == k) *rc.reported_kw *= 10.0;
        rep.per_region.push_back(rc);
      }
      const auto flags = detect_outliers(rep, 3.0);
      ++cases;
      if (flags.size() != 1 || flags[0].region != "R" + std::to_string(k)) ++wrong;
    }
  }
  return {wrong == 0, std::to_string(cases) + " constructions, " + std::to_string(wrong) + " wrong"};
}

Outcome determinism() {
  const auto base = oracle::temp_dir("acceptance-determinism");
  for (const char* run : {"w1a", "w1b", "w8a", "w8b"}) {
    const int workers = run[1] == '1' ? 1 : 8;
    const std::string err = pipeline::run_all(base / run, workers);
    if (!err.empty()) return {false, std::string(run) + " failed: " + err};
  }
  const auto ref = pipeline::snapshot(base / "w1a");
  int differing = 0;
  for (const char* run : {"w1b", "w8a", "w8b"}) {
    const auto other = pipeline::snapshot(base / run);
    if (other.size() != ref.size()) ++differing;
    for (const auto& [path, bytes] : ref) {
      auto it = other.find(path);
      if (it == other.end() || it->second != bytes) ++differing;
    }
  }
  std::filesystem::remove_all(base);
  return {differing == 0, std::to_string(ref.size()) + " files x 4 runs (workers 1, 1, 8, 8), " +
                              std::to_string(differing) + " differences"};
}

Outcome gradient_check() {
  SceneConfig sc;
  sc.width = sc.height = 32;
  const auto tiles = labeled_tiles(make_scene(sc, 2, 9));
  const TrainingSet data = TrainingSet::from_tiles(tiles, {});
  TrainConfig cfg;
  cfg.l2 = 0.01;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    SegmenterModel m = initial_model({}, rng());
    for (auto& w : m.weights) w += u(rng);
    m.bias = u(rng);
    const LossGradient lg = loss_and_gradient(m, data, cfg);
    const std::size_t k = rng() % lg.gradient.size();
    const double fd = oracle::fd_gradient(m, data, cfg, k, 1e-5);
    const double rel = std::abs(fd - lg.gradient[k]) / std::max({std::abs(fd), std::abs(lg.gradient[k]), 1e-8});
    worst = std::max(worst, rel);
  }
  return {worst <= 1e-4, "20 coordinates, worst relative error " + fmt("%.2e", worst)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"f1-arithmetic", f1_arithmetic},
      {"iou-oracle", iou_oracle},
      {"matching-oracle", matching_oracle},
      {"end-to-end-synthetic", end_to_end},
      {"finetune-benefit", finetune_benefit},
      {"gamma-recovery", gamma_recovery},
      {"pearson-properties", pearson_properties},
      {"outlier-flagging", outlier_flagging},
      {"determinism", determinism},
      {"gradient-check", gradient_check},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
