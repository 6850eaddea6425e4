#include <benchmark/benchmark.h>

#include <random>

#include "solarmap/installations.hpp"
#include "solarmap/metrics.hpp"
#include "solarmap/segmenter.hpp"
#include "solarmap/synthetic.hpp"
#include "solarmap/vector.hpp"

namespace {

using namespace solarmap;

const SyntheticTile& tile() {
  static const SyntheticTile t = make_tile(SceneConfig{}, 0, 1);
  return t;
}

Raster random_confidence(int side) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(side) * side);
  for (auto& x : v) x = u(rng);
  return Raster::confidence(side, side, GeoTransform::north_up(0, 0, 0.3), std::move(v));
}

void BM_Threshold(benchmark::State& state) {
  const Raster conf = random_confidence(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(threshold(conf, 0.5));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(conf.pixel_count()));
}
BENCHMARK(BM_Threshold)->Arg(128)->Arg(1024);

void BM_Rasterize(benchmark::State& state) {
  const auto& t = tile();
  std::vector<Polygon> polys;
  for (const auto& a : t.truth.polygons) polys.push_back(a.polygon);
  const Raster& img = t.tile.image;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rasterize(polys, img.geo(), img.width(), img.height()));
  }
}
BENCHMARK(BM_Rasterize);

void BM_ExtractInstallations(benchmark::State& state) {
  const Raster& mask = tile().tile.mask;
  ExtractOptions opt;
  opt.merge_distance = static_cast<double>(state.range(0)) / 10.0;
  for (auto _ : state) benchmark::DoNotOptimize(extract_installations(mask, opt));
}
BENCHMARK(BM_ExtractInstallations)->Arg(0)->Arg(18)->Arg(30);

void BM_Features(benchmark::State& state) {
  const Raster& img = tile().tile.image;
  PixelFeatureSpec spec;
  spec.window_radius = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(img, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(img.pixel_count()));
}
BENCHMARK(BM_Features)->Arg(1)->Arg(3);

void BM_PixelIou(benchmark::State& state) {
  const Raster a = threshold(random_confidence(512), 0.5);
  const Raster b = threshold(random_confidence(512), 0.4);
  for (auto _ : state) benchmark::DoNotOptimize(pixel_iou(a, b));
}
BENCHMARK(BM_PixelIou);

void BM_Infer(benchmark::State& state) {
  const SegmenterModel m = initial_model({}, 0);
  const Raster& img = tile().tile.image;
  for (auto _ : state) benchmark::DoNotOptimize(infer(m, img));
}
BENCHMARK(BM_Infer);

}  // namespace

BENCHMARK_MAIN();
