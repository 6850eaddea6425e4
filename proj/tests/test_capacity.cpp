#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "solarmap/capacity.hpp"
#include "solarmap/error.hpp"
#include "solarmap/synthetic.hpp"

namespace solarmap {
namespace {

Installation at(int id, double x, double y, double area, std::optional<Color> color = {}) {
  Installation i;
  i.id = id;
  i.tile_id = "t";
  i.area = area;
  i.centroid = {x, y};
  i.mean_color = color;
  return i;
}

Region box(std::string name, double x0, double y0, double x1, double y1,
           std::optional<double> reported = {}) {
  Region r;
  r.id = "region-" + name;
  r.name = std::move(name);
  r.boundary = make_polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
  r.reported_capacity = reported;
  return r;
}

TEST(Calibrate, DividesKnownCapacityByArea) {
  const std::vector<Installation> insts{at(1, 0, 0, 400), at(2, 0, 0, 600)};
  const CapacityModel m = calibrate_fixed(insts, 150.0, "A");
  EXPECT_DOUBLE_EQ(m.gamma, 0.15);
  EXPECT_EQ(m.calibration.source, "A");
  EXPECT_EQ(m.calibration.area_sum, 1000.0);
  EXPECT_EQ(m.calibration.known_capacity, 150.0);
}

TEST(Calibrate, SingleInstallationRecoversGamma) {
  const double gamma = 0.173;
  const double known = 52.0;
  const std::vector<Installation> insts{at(1, 0, 0, known / gamma)};
  EXPECT_NEAR(calibrate_fixed(insts, known).gamma, gamma, 1e-15);
}

TEST(Calibrate, NoisyAreasStayWithinFivePercent) {
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> area(5.0, 80.0);
  std::uniform_real_distribution<double> noise(0.95, 1.05);
  std::vector<Installation> insts;
  double known = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = area(rng);
    known += 0.15 * a;
    insts.push_back(at(i + 1, 0, 0, a * noise(rng)));
  }
  EXPECT_NEAR(calibrate_fixed(insts, known).gamma, 0.15, 0.05 * 0.15);
}

TEST(Calibrate, RejectsEmptyRegionAndBadCapacity) {
  EXPECT_THROW(calibrate_fixed({}, 10.0), Error);
  const std::vector<Installation> insts{at(1, 0, 0, 10)};
  EXPECT_THROW(calibrate_fixed(insts, 0.0), Error);
  EXPECT_THROW(calibrate_fixed(insts, -1.0), Error);
}

std::vector<CapacitySample> color_samples(std::mt19937_64& rng, Color w, double b, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> area(4.0, 60.0);
  std::vector<CapacitySample> out;
  for (int i = 0; i < n; ++i) {
    CapacitySample s;
    s.mean_color = {u(rng), u(rng), u(rng)};
    s.area = area(rng);
    const double g = w[0] * s.mean_color[0] + w[1] * s.mean_color[1] + w[2] * s.mean_color[2] + b;
    s.capacity = g * s.area;
    out.push_back(s);
  }
  return out;
}

TEST(ColorFit, NoiselessGeneratorIsRecovered) {
  std::mt19937_64 rng(93);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> coef(-0.1, 0.1);
    const Color w{coef(rng), coef(rng), coef(rng)};
    const double b = 0.15 + coef(rng);
    const CapacityModel m = fit_color_model(color_samples(rng, w, b, 4 + trial * 3));
    EXPECT_EQ(m.kind, CapacityModelKind::kColorLinear);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(m.color_weights[k], w[k], 1e-9);
    EXPECT_NEAR(m.intercept, b, 1e-9);
  }
}

TEST(ColorFit, IdenticalColorsAreSingular) {
  std::vector<CapacitySample> s(6, CapacitySample{{0.2, 0.3, 0.4}, 10.0, 1.5});
  try {
    fit_color_model(s);
    FAIL() << "expected a singular design";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingular);
    EXPECT_NE(std::string(e.what()).find("direction"), std::string::npos);
  }
}

TEST(ColorFit, CollinearBandsAreSingular) {
  std::mt19937_64 rng(95);
  auto s = color_samples(rng, {0.01, 0.02, 0.03}, 0.1, 10);
  for (auto& x : s) x.mean_color[2] = 2.0 * x.mean_color[0];
  EXPECT_THROW(fit_color_model(s), Error);
}

TEST(ColorFit, PreconditionsAreChecked) {
  std::mt19937_64 rng(97);
  EXPECT_THROW(fit_color_model(color_samples(rng, {0, 0, 0}, 0.1, 3)), Error);
  auto s = color_samples(rng, {0, 0, 0}, 0.1, 8);
  s[2].area = 0.0;
  EXPECT_THROW(fit_color_model(s), Error);
}

TEST(ColorFit, ZeroWeightsReduceToFixedModel) {
  std::mt19937_64 rng(99);
  const CapacityModel fitted = fit_color_model(color_samples(rng, {0, 0, 0}, 0.15, 12));
  const CapacityModel fixed = CapacityModel::fixed(0.15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Installation inst = at(1, 0, 0, 1.0 + 50 * u(rng), Color{u(rng), u(rng), u(rng)});
    EXPECT_NEAR(predict(fitted, inst).kw, predict(fixed, inst).kw, 1e-9);
  }
}

TEST(Predict, FixedArithmetic) {
  const CapacityModel m = CapacityModel::fixed(0.15);
  EXPECT_DOUBLE_EQ(predict(m, at(1, 0, 0, 9.0)).kw, 1.35);
  EXPECT_EQ(predict(m, at(1, 0, 0, 0.0)).kw, 0.0);
  for (double a : {1.0, 3.7, 120.0}) {
    EXPECT_DOUBLE_EQ(predict(m, at(1, 0, 0, 2 * a)).kw, 2 * predict(m, at(1, 0, 0, a)).kw);
  }
}

TEST(Predict, ColorModelClampsNegativeGamma) {
  CapacityModel m;
  m.kind = CapacityModelKind::kColorLinear;
  m.color_weights = {-1.0, 0.0, 0.0};
  m.intercept = 0.1;
  const CapacityEstimate e = predict(m, at(1, 0, 0, 10, Color{0.5, 0, 0}));
  EXPECT_EQ(e.kw, 0.0);
  EXPECT_TRUE(e.clamped);
  const CapacityEstimate ok = predict(m, at(1, 0, 0, 10, Color{0.05, 0, 0}));
  EXPECT_NEAR(ok.kw, 0.5, 1e-12);
  EXPECT_FALSE(ok.clamped);
}

TEST(Predict, ColorModelNeedsMeanColor) {
  CapacityModel m;
  m.kind = CapacityModelKind::kColorLinear;
  EXPECT_THROW(predict(m, at(1, 0, 0, 10)), Error);
}

TEST(Aggregate, SumsPerRegion) {
  const std::vector<Region> regions{box("A", 0, 0, 10, 10), box("B", 10, 0, 20, 10)};
  const std::vector<Installation> insts{at(1, 2, 2, 9), at(2, 7, 7, 9), at(3, 15, 5, 9)};
  const CapacityReport r = aggregate(insts, regions, CapacityModel::fixed(0.15));
  ASSERT_EQ(r.per_region.size(), 2u);
  EXPECT_NEAR(r.per_region[0].estimated_kw, 2.7, 1e-12);
  EXPECT_EQ(r.per_region[0].installations, 2u);
  EXPECT_NEAR(r.per_region[1].estimated_kw, 1.35, 1e-12);
  EXPECT_TRUE(r.unassigned.empty());
}

TEST(Aggregate, OutsideInstallationsAreUnassigned) {
  const std::vector<Region> regions{box("A", 0, 0, 10, 10)};
  const std::vector<Installation> insts{at(1, 2, 2, 9), at(2, 30, 30, 9)};
  const CapacityReport r = aggregate(insts, regions, CapacityModel::fixed(0.15));
  EXPECT_NEAR(r.per_region[0].estimated_kw, 1.35, 1e-12);
  ASSERT_EQ(r.unassigned.size(), 1u);
  EXPECT_EQ(r.unassigned[0], "t/2");
  EXPECT_NEAR(r.unassigned_kw, 1.35, 1e-12);
  EXPECT_FALSE(r.per_installation[1].region.has_value());
}

TEST(Aggregate, OverlappingRegionsAreRejected) {
  const std::vector<Region> regions{box("A", 0, 0, 10, 10), box("B", 5, 5, 15, 15)};
  EXPECT_THROW(aggregate({}, regions, CapacityModel::fixed(0.15)), Error);
}

TEST(Aggregate, UnknownExcludedRegionIsRejected) {
  const std::vector<Region> regions{box("A", 0, 0, 10, 10)};
  AggregateOptions opt;
  opt.excluded_regions = {"Nowhere"};
  EXPECT_THROW(aggregate({}, regions, CapacityModel::fixed(0.15), opt), Error);
}

struct Town {
  std::vector<Region> regions;
  std::vector<Installation> insts;
};

Town random_town(std::uint64_t seed, int nregions, int per_region, double area_scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Town t;
  int id = 0;
  for (int k = 0; k < nregions; ++k) {
    t.regions.push_back(box("R" + std::to_string(k), 100.0 * k, 0, 100.0 * (k + 1), 100));
    for (int i = 0; i < per_region; ++i) {
      t.insts.push_back(at(++id, 100.0 * k + 1 + 98 * u(rng), 1 + 98 * u(rng),
                           area_scale * (3 + 60 * u(rng))));
    }
  }
  for (int i = 0; i < 5; ++i) t.insts.push_back(at(++id, -50.0 - i, 50.0, area_scale * 20.0));
  return t;
}

std::vector<Installation> in_region(const CapacityReport& rep, const Town& t,
                                    const std::string& name) {
  std::vector<Installation> out;
  for (std::size_t i = 0; i < t.insts.size(); ++i) {
    if (rep.per_installation[i].region == name) out.push_back(t.insts[i]);
  }
  return out;
}

TEST(Aggregate, CalibrationRegionReproducesKnownCapacity) {
  const Town t = random_town(101, 5, 37);
  const CapacityReport probe = aggregate(t.insts, t.regions, CapacityModel::fixed(1.0));
  const double known = 1234.5;
  const CapacityModel m = calibrate_fixed(in_region(probe, t, "R2"), known, "R2");
  const CapacityReport rep = aggregate(t.insts, t.regions, m);
  EXPECT_NEAR(rep.per_region[2].estimated_kw, known, 1e-9 * known);
}

TEST(Aggregate, ConservesTotalCapacity) {
  const Town t = random_town(103, 6, 50);
  AggregateOptions opt;
  opt.workers = 3;
  const CapacityReport rep = aggregate(t.insts, t.regions, CapacityModel::fixed(0.17), opt);
  double per_inst = 0.0, per_region = 0.0;
  for (const auto& i : rep.per_installation) per_inst += i.kw;
  for (const auto& r : rep.per_region) per_region += r.estimated_kw;
  EXPECT_NEAR(per_region + rep.unassigned_kw, per_inst, 1e-9 * per_inst);
  EXPECT_EQ(rep.unassigned.size(), 5u);
  EXPECT_EQ(to_json(rep), to_json(aggregate(t.insts, t.regions, CapacityModel::fixed(0.17))));
}

TEST(Aggregate, RecalibrationIsScaleInvariant) {
  const double s = 2.5;
  const Town a = random_town(105, 3, 20);
  const Town b = random_town(105, 3, 20, s);
  const CapacityModel fixed = CapacityModel::fixed(0.15);
  for (std::size_t i = 0; i < a.insts.size(); ++i) {
    EXPECT_NEAR(predict(fixed, b.insts[i]).kw, s * predict(fixed, a.insts[i]).kw, 1e-12);
  }
  const CapacityReport pa = aggregate(a.insts, a.regions, fixed);
  const CapacityReport pb = aggregate(b.insts, b.regions, fixed);
  const CapacityModel ma = calibrate_fixed(in_region(pa, a, "R0"), 500.0);
  const CapacityModel mb = calibrate_fixed(in_region(pb, b, "R0"), 500.0);
  EXPECT_NEAR(mb.gamma, ma.gamma / s, 1e-12 * ma.gamma);
  for (std::size_t i = 0; i < a.insts.size(); ++i) {
    EXPECT_NEAR(predict(mb, b.insts[i]).kw, predict(ma, a.insts[i]).kw, 1e-9);
  }
}

TEST(Aggregate, SyntheticRegionsTileWithoutOverlap) {
  const auto scene = make_scene(SceneConfig{}, 10, 5);
  const auto regions = make_regions(scene, 0.15, 0.0, 1);
  std::vector<Installation> insts;
  for (const auto& t : scene) {
    auto found = extract_installations(t.tile.mask, ExtractOptions{});
    for (auto& i : found) i.tile_id = t.tile.image.tile_id();
    insts.insert(insts.end(), found.begin(), found.end());
  }
  const CapacityReport rep = aggregate(insts, regions, CapacityModel::fixed(0.15));
  EXPECT_TRUE(rep.unassigned.empty());
  for (const auto& r : rep.per_region) {
    EXPECT_NEAR(r.estimated_kw, *r.reported_kw, 1e-9 * *r.reported_kw);
  }
  ASSERT_TRUE(rep.pearson_r.has_value());
  EXPECT_NEAR(*rep.pearson_r, 1.0, 1e-12);
}

TEST(Pearson, AffineExamples) {
  const std::vector<double> x{1, 2, 3, 4, 5, 6};
  std::vector<double> y, ny;
  for (double v : x) {
    y.push_back(2 * v + 3);
    ny.push_back(-v);
  }
  EXPECT_NEAR(*pearson(x, y), 1.0, 1e-15);
  EXPECT_NEAR(*pearson(x, ny), -1.0, 1e-15);
}

TEST(Pearson, MatchesDefinitionOracle) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{2, 1, 4, 3, 6};
  EXPECT_NEAR(*pearson(x, y), oracle::pearson(x, y), 1e-12);
  EXPECT_NEAR(*pearson(x, y), 10.0 / std::sqrt(148.0), 1e-12);
  std::mt19937_64 rng(107);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> a(3 + i), b(3 + i);
    for (std::size_t k = 0; k < a.size(); ++k) {
      a[k] = n(rng);
      b[k] = 0.4 * a[k] + n(rng);
    }
    EXPECT_NEAR(*pearson(a, b), oracle::pearson(a, b), 1e-12);
  }
}

TEST(Pearson, InvariantUnderAffineMaps) {
  std::mt19937_64 rng(109);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(40), y(40);
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = n(rng);
    y[k] = x[k] + n(rng);
  }
  const double r = *pearson(x, y);
  for (double a : {3.0, 0.01, -2.0, -1e3}) {
    std::vector<double> z;
    for (double v : y) z.push_back(a * v + 17.0);
    EXPECT_NEAR(*pearson(x, z), std::copysign(1.0, a) * r, 1e-12);
  }
}

TEST(Pearson, UndefinedAndInvalidInputs) {
  const std::vector<double> x{1, 2, 3};
  const std::vector<double> c{4, 4, 4};
  EXPECT_FALSE(pearson(x, c).has_value());
  EXPECT_FALSE(pearson(c, x).has_value());
  EXPECT_THROW(pearson(std::vector<double>{1.0}, std::vector<double>{2.0}), Error);
  EXPECT_THROW(pearson(x, std::vector<double>{1.0, 2.0}), Error);
}

CapacityReport linear_report(int n, int inflated) {
  CapacityReport rep;
  for (int i = 0; i < n; ++i) {
    RegionCapacity r;
    r.name = "R" + std::to_string(i);
    r.estimated_kw = 10.0 + 7.0 * i;
    r.reported_kw = 1.1 * r.estimated_kw + 2.0;
    if (i == inflated) *r.reported_kw *= 10.0;
    rep.per_region.push_back(r);
  }
  return rep;
}

std::pair<std::vector<double>, std::vector<double>> pairs(const CapacityReport& rep,
                                                          const std::string& skip = {}) {
  std::vector<double> e, r;
  for (const auto& reg : rep.per_region) {
    if (reg.name == skip) continue;
    e.push_back(reg.estimated_kw);
    r.push_back(*reg.reported_kw);
  }
  return {e, r};
}

TEST(Outliers, InflatedRegionIsTheOnlyFlag) {
  for (int n : {5, 8, 20}) {
    for (int k = 0; k < n; ++k) {
      const CapacityReport rep = linear_report(n, k);
      const auto flags = detect_outliers(rep);
      ASSERT_EQ(flags.size(), 1u) << "n=" << n << " k=" << k;
      EXPECT_EQ(flags[0].region, "R" + std::to_string(k));
      const auto [e, r] = pairs(rep);
      const auto [e2, r2] = pairs(rep, flags[0].region);
      EXPECT_GE(std::abs(*pearson(e2, r2)), std::abs(*pearson(e, r)));
    }
  }
}

TEST(Outliers, LinearDataHasNoFlags) {
  EXPECT_TRUE(detect_outliers(linear_report(10, -1)).empty());
}

TEST(Outliers, NeedsThreeRegions) {
  EXPECT_THROW(detect_outliers(linear_report(2, -1)), Error);
}

TEST(Outliers, ExcludedRegionsAreLeftOut) {
  CapacityReport rep = linear_report(8, 3);
  rep.per_region[3].excluded = true;
  EXPECT_TRUE(detect_outliers(rep).empty());
}

TEST(Aggregate, ExclusionIsExplicitAndReported) {
  std::vector<Region> regions;
  std::vector<Installation> insts;
  for (int k = 0; k < 6; ++k) {
    const double area = 10.0 + 5.0 * k;
    const double reported = (k == 4 ? 10.0 : 1.0) * 0.15 * area;
    regions.push_back(box("R" + std::to_string(k), 10.0 * k, 0, 10.0 * (k + 1), 10, reported));
    insts.push_back(at(k + 1, 10.0 * k + 5, 5, area));
  }
  const CapacityReport plain = aggregate(insts, regions, CapacityModel::fixed(0.15));
  EXPECT_TRUE(plain.excluded.empty());
  const auto flags = detect_outliers(plain);
  ASSERT_EQ(flags.size(), 1u);
  EXPECT_EQ(flags[0].region, "R4");
  AggregateOptions opt;
  opt.excluded_regions = {"R4"};
  const CapacityReport rep = aggregate(insts, regions, CapacityModel::fixed(0.15), opt);
  ASSERT_EQ(rep.excluded.size(), 1u);
  EXPECT_EQ(rep.excluded[0].name, "R4");
  EXPECT_EQ(rep.excluded[0].reason, "allowlisted");
  EXPECT_TRUE(rep.per_region[4].excluded);
  EXPECT_NEAR(*rep.pearson_r, 1.0, 1e-12);
  EXPECT_GE(std::abs(*rep.pearson_r), std::abs(*plain.pearson_r));
  EXPECT_EQ(rep.residuals.size(), 6u);
}

TEST(Serialization, CsvAndJsonShapes) {
  const std::vector<Region> regions{box("A", 0, 0, 10, 10, 2.0), box("B, east", 10, 0, 20, 10)};
  const std::vector<Installation> insts{at(1, 2, 2, 9), at(2, 15, 5, 9)};
  const CapacityReport r = aggregate(insts, regions, CapacityModel::fixed(0.15));
  const std::string csv = to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "region,estimated_kw,reported_kw,residual,excluded");
  EXPECT_NE(csv.find("\"B, east\""), std::string::npos);
  const std::string json = to_json(r);
  for (const char* key : {"per_installation", "per_region", "residuals", "pearson_r", "excluded",
                          "unassigned", "clamped_gamma_count"}) {
    EXPECT_NE(json.find(std::string("\"") + key + "\""), std::string::npos) << key;
  }
}

TEST(Serialization, ModelRoundTrip) {
  const auto dir = oracle::temp_dir("capacity_model");
  std::mt19937_64 rng(111);
  CapacityModel m = fit_color_model(color_samples(rng, {0.01, -0.02, 0.03}, 0.12, 9));
  save_capacity_model(m, dir / "m.json");
  const CapacityModel back = load_capacity_model(dir / "m.json");
  EXPECT_EQ(back.kind, m.kind);
  EXPECT_EQ(back.color_weights, m.color_weights);
  EXPECT_EQ(back.intercept, m.intercept);
  EXPECT_EQ(back.calibration.samples, 9u);
  const CapacityModel f = calibrate_fixed(std::vector<Installation>{at(1, 0, 0, 3.0)}, 0.1, "X");
  save_capacity_model(f, dir / "f.json");
  const CapacityModel fb = load_capacity_model(dir / "f.json");
  EXPECT_EQ(fb.gamma, f.gamma);
  EXPECT_EQ(fb.calibration.source, "X");
}

}  // namespace
}  // namespace solarmap
