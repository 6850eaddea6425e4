#include "solarmap/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "solarmap/error.hpp"
#include "solarmap/parallel.hpp"

namespace solarmap {

namespace {

using nlohmann::json;

// Pixels per reduction block. Fixed so that partial sums, and therefore the
// rounding of the total, never depend on how many threads ran.
constexpr std::size_t kBlock = 4096;

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void require_rgb(const Raster& r, const char* op) {
  if (!r.is_rgb()) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(op) + " expects a 3-band RGB raster, got " +
                    std::to_string(r.bands()) + " band(s)");
  }
}

void require_spec(const PixelFeatureSpec& spec) {
  if (spec.window_radius < 1) {
    throw Error(ErrorCode::kInvalidArgument, "feature window radius must be >= 1");
  }
  if (spec.bands != 3) {
    throw Error(ErrorCode::kInvalidArgument, "feature spec must describe 3 bands");
  }
}

double dot(std::span<const double> w, std::span<const double> f) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * f[i];
  return s;
}

void check_finite(const SegmenterModel& m, int epoch) {
  auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(m.bias) || std::any_of(m.weights.begin(), m.weights.end(), bad)) {
    throw Error(ErrorCode::kNumeric,
                "parameters became non-finite after epoch " + std::to_string(epoch) +
                    "; the learning rate is too high");
  }
}

}  // namespace

FeatureGrid extract_features(const Raster& rgb, const PixelFeatureSpec& spec, int workers) {
  require_rgb(rgb, "extract_features");
  require_spec(spec);
  const int w = rgb.width();
  const int h = rgb.height();
  const int bands = spec.bands;
  const int radius = spec.window_radius;
  FeatureGrid grid{w, h, spec.dimension(), {}};
  grid.values.assign(rgb.pixel_count() * grid.dimension, 0.0);

  parallel_for(static_cast<std::size_t>(h), workers, [&](std::size_t row_index) {
    const int row = static_cast<int>(row_index);
    const int r0 = std::max(0, row - radius);
    const int r1 = std::min(h - 1, row + radius);
    for (int col = 0; col < w; ++col) {
      const int c0 = std::max(0, col - radius);
      const int c1 = std::min(w - 1, col + radius);
      const double n = static_cast<double>((r1 - r0 + 1) * (c1 - c0 + 1));
      double* f = grid.values.data() + (static_cast<std::size_t>(row) * w + col) * grid.dimension;
      for (int b = 0; b < bands; ++b) {
        double sum = 0.0;
        for (int rr = r0; rr <= r1; ++rr) {
          for (int cc = c0; cc <= c1; ++cc) sum += rgb.intensity(cc, rr, b);
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (int rr = r0; rr <= r1; ++rr) {
          for (int cc = c0; cc <= c1; ++cc) {
            const double d = rgb.intensity(cc, rr, b) - mean;
            ss += d * d;
          }
        }
        f[b] = mean;
        f[bands + b] = std::sqrt(ss / n);
        f[2 * bands + b] = rgb.intensity(col, row, b);
      }
    }
  });
  return grid;
}

double SegmenterModel::probability(std::span<const double> features) const {
  return logistic(dot(weights, features) + bias);
}

TrainingSet TrainingSet::from_tiles(std::span<const LabeledTile* const> tiles,
                                    const PixelFeatureSpec& spec, int workers) {
  require_spec(spec);
  TrainingSet set;
  set.spec = spec;
  std::size_t total = 0;
  for (const LabeledTile* t : tiles) {
    require_rgb(t->image, "training");
    if (!t->mask.is_mask() || t->mask.width() != t->image.width() ||
        t->mask.height() != t->image.height()) {
      throw Error(ErrorCode::kSizeMismatch,
                  "training mask for tile '" + t->image.tile_id() +
                      "' is not a mask congruent with its image");
    }
    total += t->image.pixel_count();
  }
  set.features.reserve(total * spec.dimension());
  set.labels.reserve(total);
  for (const LabeledTile* t : tiles) {
    FeatureGrid grid = extract_features(t->image, spec, workers);
    set.features.insert(set.features.end(), grid.values.begin(), grid.values.end());
    for (std::uint8_t v : t->mask.u8()) {
      set.labels.push_back(v ? 1 : 0);
      set.positives += v ? 1 : 0;
    }
  }
  return set;
}

TrainingSet TrainingSet::from_tiles(std::span<const LabeledTile> tiles,
                                    const PixelFeatureSpec& spec, int workers) {
  std::vector<const LabeledTile*> ptrs;
  ptrs.reserve(tiles.size());
  for (const auto& t : tiles) ptrs.push_back(&t);
  return from_tiles(std::span<const LabeledTile* const>(ptrs), spec, workers);
}

LossGradient loss_and_gradient(const SegmenterModel& m, const TrainingSet& data,
                               const TrainConfig& cfg) {
  const std::size_t n = data.size();
  const std::size_t dim = static_cast<std::size_t>(data.spec.dimension());
  if (m.weights.size() != dim) {
    throw Error(ErrorCode::kInvalidArgument, "model and data feature dimensions differ");
  }
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "empty training set");

  double w_pos = 1.0;
  double w_neg = 1.0;
  const std::size_t negatives = n - data.positives;
  if (cfg.balance_classes && data.positives > 0 && negatives > 0) {
    w_pos = static_cast<double>(n) / (2.0 * static_cast<double>(data.positives));
    w_neg = static_cast<double>(n) / (2.0 * static_cast<double>(negatives));
  }

  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  const std::size_t stride = dim + 2;  // gradient (dim + bias), then loss
  std::vector<double> partial(blocks * stride, 0.0);

  parallel_for(blocks, cfg.workers, [&](std::size_t b) {
    double* acc = partial.data() + b * stride;
    const std::size_t begin = b * kBlock;
    const std::size_t end = std::min(n, begin + kBlock);
    for (std::size_t i = begin; i < end; ++i) {
      std::span<const double> f(data.features.data() + i * dim, dim);
      const double z = dot(m.weights, f) + m.bias;
      const double y = data.labels[i];
      const double weight = y > 0.0 ? w_pos : w_neg;
      const double dz = weight * (logistic(z) - y);
      for (std::size_t k = 0; k < dim; ++k) acc[k] += dz * f[k];
      acc[dim] += dz;
      acc[dim + 1] += weight * (softplus(z) - y * z);
    }
  });

  LossGradient out;
  out.gradient.assign(dim + 1, 0.0);
  std::vector<double> column(blocks);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < stride; ++k) {
    for (std::size_t b = 0; b < blocks; ++b) column[b] = partial[b * stride + k];
    const double total = pairwise_sum(column) * inv_n;
    if (k <= dim) {
      out.gradient[k] = total;
    } else {
      out.loss = total;
    }
  }
  double norm2 = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    out.gradient[k] += cfg.l2 * m.weights[k];
    norm2 += m.weights[k] * m.weights[k];
  }
  out.loss += 0.5 * cfg.l2 * norm2;
  return out;
}

SegmenterModel initial_model(const PixelFeatureSpec& spec, std::uint64_t seed) {
  require_spec(spec);
  SegmenterModel m;
  m.feature_spec = spec;
  m.seed = seed;
  // Raw engine output keeps the initialization identical across standard
  // library implementations.
  std::mt19937_64 rng(seed);
  m.weights.resize(spec.dimension());
  for (auto& w : m.weights) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    w = (u - 0.5) * 0.02;
  }
  m.bias = 0.0;
  return m;
}

SegmenterModel finetune(const SegmenterModel& m, const TrainingSet& data,
                        const TrainConfig& cfg) {
  if (!(m.feature_spec == data.spec)) {
    throw Error(ErrorCode::kInvalidArgument,
                "feature spec mismatch between model and fine-tuning data");
  }
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be positive");
  }
  if (cfg.epochs < 0) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 0");
  if (!(cfg.l2 >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "l2 must be >= 0");
  if (data.positives == 0 || data.positives == data.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "training data must contain both panel and background pixels");
  }

  SegmenterModel out = m;
  const std::size_t dim = out.weights.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const LossGradient lg = loss_and_gradient(out, data, cfg);
    if (!std::isfinite(lg.loss)) {
      throw Error(ErrorCode::kNumeric, "non-finite loss at epoch " + std::to_string(epoch) +
                                           "; the learning rate is too high");
    }
    out.train_log.push_back(lg.loss);
    for (std::size_t k = 0; k < dim; ++k) out.weights[k] -= cfg.learning_rate * lg.gradient[k];
    out.bias -= cfg.learning_rate * lg.gradient[dim];
    check_finite(out, epoch);
  }
  return out;
}

SegmenterModel finetune(const SegmenterModel& m, std::span<const LabeledTile> tiles,
                        const TrainConfig& cfg) {
  return finetune(m, TrainingSet::from_tiles(tiles, m.feature_spec, cfg.workers), cfg);
}

SegmenterModel train(const TrainingSet& data, const TrainConfig& cfg) {
  return finetune(initial_model(data.spec, cfg.seed), data, cfg);
}

SegmenterModel train(std::span<const LabeledTile> tiles, const TrainConfig& cfg,
                     const PixelFeatureSpec& spec) {
  return train(TrainingSet::from_tiles(tiles, spec, cfg.workers), cfg);
}

Raster infer(const SegmenterModel& m, const Raster& rgb, int workers) {
  require_rgb(rgb, "infer");
  if (m.weights.size() != static_cast<std::size_t>(m.feature_spec.dimension())) {
    throw Error(ErrorCode::kInvalidArgument, "model weights do not match its feature spec");
  }
  const FeatureGrid grid = extract_features(rgb, m.feature_spec, workers);
  Raster out(rgb.width(), rgb.height(), 1, DType::kF32, rgb.geo(), rgb.tile_id());
  auto dst = out.f32();
  constexpr float kLow = std::numeric_limits<float>::min();
  const float kHigh = std::nextafter(1.0f, 0.0f);
  parallel_for(static_cast<std::size_t>(rgb.height()), workers, [&](std::size_t row) {
    for (int col = 0; col < rgb.width(); ++col) {
      const float p = static_cast<float>(m.probability(grid.at(col, static_cast<int>(row))));
      dst[out.index(col, static_cast<int>(row))] = std::clamp(p, kLow, kHigh);
    }
  });
  return out;
}

void save_model(const SegmenterModel& m, const std::filesystem::path& path) {
  json j = {{"weights", m.weights},
            {"bias", m.bias},
            {"feature_spec",
             {{"window_radius", m.feature_spec.window_radius}, {"bands", m.feature_spec.bands}}},
            {"seed", m.seed},
            {"train_log", m.train_log}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write model " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

SegmenterModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open model " + path.string());
  try {
    const json j = json::parse(in);
    SegmenterModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.feature_spec.window_radius = j.at("feature_spec").at("window_radius").get<int>();
    m.feature_spec.bands = j.at("feature_spec").at("bands").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_log = j.value("train_log", std::vector<double>{});
    require_spec(m.feature_spec);
    if (m.weights.size() != static_cast<std::size_t>(m.feature_spec.dimension())) {
      throw Error(ErrorCode::kFormat, "weight count does not match the feature spec");
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace solarmap
