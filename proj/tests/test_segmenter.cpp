#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "solarmap/error.hpp"
#include "solarmap/segmenter.hpp"
#include "solarmap/synthetic.hpp"

namespace solarmap {
namespace {

// Mean and population standard deviation of one band over the clamped
// window, by direct enumeration.
std::pair<double, double> window_stats(const Raster& img, int col, int row, int radius, int band) {
  std::vector<double> v;
  for (int r = row - radius; r <= row + radius; ++r) {
    for (int c = col - radius; c <= col + radius; ++c) {
      if (img.contains(c, r)) v.push_back(img.intensity(c, r, band));
    }
  }
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

Raster checkerboard(int w, int h) {
  std::vector<float> v;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const float on = (r + c) % 2 ? 1.0f : 0.0f;
      v.insert(v.end(), {on, 0.25f + 0.5f * on, 0.125f});
    }
  }
  return Raster::rgb(w, h, GeoTransform{}, v);
}

SceneConfig separable_scene() {
  SceneConfig cfg;
  cfg.width = 48;
  cfg.height = 48;
  cfg.style.panel = {0.0, 0.0, 1.0};
  cfg.style.ground = {0.0, 1.0, 0.0};
  cfg.style.noise_sd = 0.0;
  return cfg;
}

double pixel_accuracy(const SegmenterModel& m, const std::vector<LabeledTile>& tiles) {
  std::size_t right = 0, total = 0;
  for (const auto& t : tiles) {
    const Raster pred = threshold(infer(m, t.image), 0.5);
    for (std::size_t i = 0; i < pred.pixel_count(); ++i) right += pred.u8()[i] == t.mask.u8()[i];
    total += pred.pixel_count();
  }
  return static_cast<double>(right) / static_cast<double>(total);
}

TEST(Features, ConstantColorHasColorMeansAndZeroStd) {
  const Raster img = Raster::rgb(5, 4, GeoTransform{}, std::vector<float>(60, 0.25f));
  std::vector<float> v;
  for (int i = 0; i < 20; ++i) v.insert(v.end(), {0.1f, 0.6f, 0.9f});
  const Raster c = Raster::rgb(5, 4, GeoTransform{}, v);
  const FeatureGrid g = extract_features(c, {2, 3});
  for (int r = 0; r < 4; ++r) {
    for (int col = 0; col < 5; ++col) {
      const auto f = g.at(col, r);
      EXPECT_DOUBLE_EQ(f[0], static_cast<double>(0.1f));
      EXPECT_DOUBLE_EQ(f[1], static_cast<double>(0.6f));
      EXPECT_DOUBLE_EQ(f[2], static_cast<double>(0.9f));
      EXPECT_EQ(f[3], 0.0);
      EXPECT_EQ(f[4], 0.0);
      EXPECT_EQ(f[5], 0.0);
    }
  }
  EXPECT_EQ(g.dimension, 9);
}

TEST(Features, CheckerboardCenterMatchesEnumeration) {
  const Raster img = checkerboard(3, 3);
  const FeatureGrid g = extract_features(img, {1, 3});
  const auto f = g.at(1, 1);
  for (int b = 0; b < 3; ++b) {
    const auto [mean, sd] = window_stats(img, 1, 1, 1, b);
    EXPECT_NEAR(f[b], mean, 1e-12);
    EXPECT_NEAR(f[3 + b], sd, 1e-12);
    EXPECT_EQ(f[6 + b], img.intensity(1, 1, b));
  }
  EXPECT_NEAR(f[0], 4.0 / 9.0, 1e-12);
}

TEST(Features, CornerUsesClampedTwoByTwoWindow) {
  const Raster img = checkerboard(3, 3);
  const FeatureGrid g = extract_features(img, {1, 3});
  const auto f = g.at(0, 0);
  EXPECT_NEAR(f[0], 0.5, 1e-12);
  EXPECT_NEAR(f[3], 0.5, 1e-12);
  for (int b = 0; b < 3; ++b) {
    const auto [mean, sd] = window_stats(img, 0, 0, 1, b);
    EXPECT_NEAR(f[b], mean, 1e-12);
    EXPECT_NEAR(f[3 + b], sd, 1e-12);
  }
}

TEST(Features, RandomImagesMatchEnumerationAtEveryPixel) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int radius = 1; radius <= 3; ++radius) {
    std::vector<float> v(11 * 7 * 3);
    for (auto& x : v) x = u(rng);
    const Raster img = Raster::rgb(11, 7, GeoTransform{}, v);
    const FeatureGrid g = extract_features(img, {radius, 3}, radius);
    for (int r = 0; r < 7; ++r) {
      for (int c = 0; c < 11; ++c) {
        for (int b = 0; b < 3; ++b) {
          const auto [mean, sd] = window_stats(img, c, r, radius, b);
          EXPECT_NEAR(g.at(c, r)[b], mean, 1e-12);
          EXPECT_NEAR(g.at(c, r)[3 + b], sd, 1e-9);
        }
      }
    }
  }
}

TEST(Features, SingleBandInputIsRejected) {
  const Raster c = Raster::confidence(2, 2, GeoTransform{}, {0, 0, 0, 0});
  EXPECT_THROW(extract_features(c, {}), Error);
}

class SeparableScene : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tiles_ = new std::vector<LabeledTile>(labeled_tiles(make_scene(separable_scene(), 4, 5)));
  }
  static void TearDownTestSuite() {
    delete tiles_;
    tiles_ = nullptr;
  }
  static std::vector<LabeledTile>* tiles_;
};

std::vector<LabeledTile>* SeparableScene::tiles_ = nullptr;

TEST_F(SeparableScene, TrainingReachesPerfectAccuracy) {
  TrainConfig cfg;
  const SegmenterModel m = train(*tiles_, cfg);
  EXPECT_EQ(pixel_accuracy(m, *tiles_), 1.0);
  for (const auto& t : *tiles_) EXPECT_EQ(threshold(infer(m, t.image), 0.5), t.mask);
}

TEST_F(SeparableScene, LossIsNonIncreasing) {
  TrainConfig cfg;
  cfg.epochs = 150;
  const SegmenterModel m = train(*tiles_, cfg);
  ASSERT_EQ(m.train_log.size(), 150u);
  for (std::size_t i = 1; i < m.train_log.size(); ++i) {
    EXPECT_LE(m.train_log[i], m.train_log[i - 1] + 1e-6) << "epoch " << i;
  }
}

TEST_F(SeparableScene, TrainingIsBitReproducibleAcrossWorkers) {
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 99;
  const SegmenterModel a = train(*tiles_, cfg);
  cfg.workers = 4;
  const SegmenterModel b = train(*tiles_, cfg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(infer(a, (*tiles_)[0].image, 1), infer(b, (*tiles_)[0].image, 3));
}

TEST_F(SeparableScene, ZeroEpochsGivesSeededInitialization) {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 1234;
  EXPECT_EQ(train(*tiles_, cfg), initial_model(PixelFeatureSpec{}, 1234));
}

TEST_F(SeparableScene, FinetuneWithZeroEpochsIsIdentity) {
  TrainConfig cfg;
  cfg.epochs = 20;
  const SegmenterModel m = train(*tiles_, cfg);
  cfg.epochs = 0;
  EXPECT_EQ(finetune(m, *tiles_, cfg), m);
}

TEST_F(SeparableScene, FinetuneFromSeededInitEqualsTrain) {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 8;
  EXPECT_EQ(finetune(initial_model({}, 8), *tiles_, cfg), train(*tiles_, cfg));
}

TEST_F(SeparableScene, FinetuneContinuesAndAppendsLog) {
  TrainConfig cfg;
  cfg.epochs = 10;
  const SegmenterModel m = train(*tiles_, cfg);
  const SegmenterModel f = finetune(m, *tiles_, cfg);
  ASSERT_EQ(f.train_log.size(), 20u);
  EXPECT_TRUE(std::equal(m.train_log.begin(), m.train_log.end(), f.train_log.begin()));
  cfg.epochs = 20;
  EXPECT_EQ(f, train(*tiles_, cfg));
}

TEST_F(SeparableScene, FinetuneRejectsSpecMismatch) {
  const SegmenterModel m = initial_model({2, 3}, 0);
  const TrainingSet data = TrainingSet::from_tiles(*tiles_, PixelFeatureSpec{});
  EXPECT_THROW(finetune(m, data, TrainConfig{}), Error);
  EXPECT_NO_THROW(finetune(m, *tiles_, TrainConfig{0.1, 1}));
}

TEST_F(SeparableScene, HugeLearningRateReportsNonFiniteLoss) {
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.epochs = 10;
  try {
    train(*tiles_, cfg);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
  }
}

TEST(Segmenter, OneClassDataIsRejected) {
  const Raster img = Raster::rgb(4, 4, GeoTransform{}, std::vector<float>(48, 0.5f));
  std::vector<LabeledTile> tiles{{img, Raster::mask(4, 4, GeoTransform{})}};
  EXPECT_THROW(train(tiles, TrainConfig{}), Error);
  tiles[0].mask = Raster::mask(4, 4, GeoTransform{}, std::vector<std::uint8_t>(16, 1));
  EXPECT_THROW(train(tiles, TrainConfig{}), Error);
}

TEST(Segmenter, GradientMatchesFiniteDifferences) {
  SceneConfig sc = separable_scene();
  sc.style = SceneStyle{};
  sc.width = sc.height = 24;
  const auto tiles = labeled_tiles(make_scene(sc, 2, 3));
  const TrainingSet data = TrainingSet::from_tiles(tiles, {});
  TrainConfig cfg;
  cfg.l2 = 0.01;
  std::mt19937_64 rng(12);
  SegmenterModel m = initial_model({}, 77);
  for (auto& w : m.weights) w += std::uniform_real_distribution<double>(-1, 1)(rng);
  m.bias = 0.3;
  const LossGradient lg = loss_and_gradient(m, data, cfg);
  for (int i = 0; i < 20; ++i) {
    const std::size_t k = rng() % lg.gradient.size();
    const double fd = oracle::fd_gradient(m, data, cfg, k, 1e-5);
    EXPECT_LE(std::abs(fd - lg.gradient[k]), 1e-4 * std::max(std::abs(fd), 1e-3)) << "k=" << k;
  }
}

TEST(Infer, ZeroModelGivesOneHalf) {
  SegmenterModel m = initial_model({}, 0);
  std::fill(m.weights.begin(), m.weights.end(), 0.0);
  const Raster img = checkerboard(4, 3);
  const Raster c = infer(m, img);
  for (float v : c.f32()) EXPECT_EQ(v, 0.5f);
}

TEST(Infer, LargeBiasSaturatesBelowOne) {
  SegmenterModel m = initial_model({}, 0);
  std::fill(m.weights.begin(), m.weights.end(), 0.0);
  m.bias = 20;
  const Raster c = infer(m, checkerboard(4, 3));
  for (float v : c.f32()) {
    EXPECT_GT(v, 0.999f);
    EXPECT_LT(v, 1.0f);
  }
  m.bias = -200;
  const Raster low = infer(m, checkerboard(4, 3));
  for (float v : low.f32()) EXPECT_GT(v, 0.0f);
}

TEST(Infer, PreservesGridAndTileId) {
  const GeoTransform g = GeoTransform::north_up(10, 20, 0.3, "EPSG:1");
  const Raster img = Raster::rgb(3, 2, g, std::vector<float>(18, 0.5f), "tile-x");
  const Raster c = infer(initial_model({}, 1), img);
  EXPECT_EQ(c.width(), 3);
  EXPECT_EQ(c.height(), 2);
  EXPECT_EQ(c.geo(), g);
  EXPECT_EQ(c.tile_id(), "tile-x");
  EXPECT_TRUE(c.is_confidence());
}

TEST(Infer, BandMismatchIsRejected) {
  const Raster m = Raster::mask(2, 2, GeoTransform{});
  EXPECT_THROW(infer(initial_model({}, 0), m), Error);
}

TEST(ModelFile, RoundTripIsExact) {
  SegmenterModel m = initial_model({2, 3}, 42);
  m.bias = -0.123456789012345;
  m.train_log = {0.7, 0.5, 1.0 / 3.0};
  const auto dir = oracle::temp_dir("model");
  save_model(m, dir / "m.json");
  EXPECT_EQ(load_model(dir / "m.json"), m);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace solarmap
