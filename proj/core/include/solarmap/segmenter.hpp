#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "solarmap/raster.hpp"

namespace solarmap {

/// Per-pixel features: window mean of each band, window standard deviation of
/// each band, then the raw center value of each band. Windows are clamped at
/// the image border.
struct PixelFeatureSpec {
  int window_radius = 1;
  int bands = 3;

  int dimension() const { return 3 * bands; }
  bool operator==(const PixelFeatureSpec&) const = default;
};

struct FeatureGrid {
  int width = 0;
  int height = 0;
  int dimension = 0;
  std::vector<double> values;  // row-major, `dimension` values per pixel

  std::span<const double> at(int col, int row) const {
    return std::span<const double>(values).subspan(
        (static_cast<std::size_t>(row) * width + col) * dimension, dimension);
  }
};

FeatureGrid extract_features(const Raster& rgb, const PixelFeatureSpec& spec,
                             int workers = 1);

struct TrainConfig {
  double learning_rate = 2.0;
  int epochs = 300;
  std::uint64_t seed = 0;
  double l2 = 0.0;
  /// Inverse-frequency weighting of positive and negative pixels.
  bool balance_classes = true;
  /// Threads for feature extraction and gradient evaluation; results do not
  /// depend on it.
  int workers = 1;
};

/// p(panel | f) = logistic(weights . f + bias)
struct SegmenterModel {
  std::vector<double> weights;
  double bias = 0.0;
  PixelFeatureSpec feature_spec;
  /// Loss at the start of every epoch run so far, across train and finetune.
  std::vector<double> train_log;
  std::uint64_t seed = 0;

  double probability(std::span<const double> features) const;
  bool operator==(const SegmenterModel&) const = default;
};

struct LabeledTile {
  Raster image;  // RGB
  Raster mask;   // truth, congruent with image
};

/// Feature matrix and labels for every pixel of a set of labeled tiles.
struct TrainingSet {
  PixelFeatureSpec spec;
  std::vector<double> features;  // pixel-major, spec.dimension() per pixel
  std::vector<std::uint8_t> labels;
  std::size_t positives = 0;

  std::size_t size() const { return labels.size(); }

  static TrainingSet from_tiles(std::span<const LabeledTile> tiles,
                                const PixelFeatureSpec& spec, int workers = 1);
  static TrainingSet from_tiles(std::span<const LabeledTile* const> tiles,
                                const PixelFeatureSpec& spec, int workers = 1);
};

struct LossGradient {
  double loss = 0.0;
  /// d loss / d weights, followed by d loss / d bias.
  std::vector<double> gradient;
};

/// Class-weighted mean cross-entropy plus l2/2 * |weights|^2. The reduction
/// runs over fixed pixel blocks, so the result is bit-identical for any
/// worker count.
LossGradient loss_and_gradient(const SegmenterModel& m, const TrainingSet& data,
                               const TrainConfig& cfg);

/// Seeded starting point used by train().
SegmenterModel initial_model(const PixelFeatureSpec& spec, std::uint64_t seed);

SegmenterModel train(const TrainingSet& data, const TrainConfig& cfg);
SegmenterModel train(std::span<const LabeledTile> tiles, const TrainConfig& cfg,
                     const PixelFeatureSpec& spec = {});

/// Continues gradient descent from m's parameters; the loss log is appended.
SegmenterModel finetune(const SegmenterModel& m, const TrainingSet& data,
                        const TrainConfig& cfg);
SegmenterModel finetune(const SegmenterModel& m, std::span<const LabeledTile> tiles,
                        const TrainConfig& cfg);

/// Confidence raster in (0, 1) with the image's size, geotransform and tile id.
Raster infer(const SegmenterModel& m, const Raster& rgb, int workers = 1);

void save_model(const SegmenterModel& m, const std::filesystem::path& path);
SegmenterModel load_model(const std::filesystem::path& path);

}  // namespace solarmap
