#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "solarmap/capacity.hpp"
#include "solarmap/error.hpp"
#include "solarmap/installations.hpp"
#include "solarmap/metrics.hpp"
#include "solarmap/parallel.hpp"
#include "solarmap/raster.hpp"
#include "solarmap/review.hpp"
#include "solarmap/review_server.hpp"
#include "solarmap/segmenter.hpp"
#include "solarmap/synthetic.hpp"
#include "solarmap/vector.hpp"

namespace solarmap::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.3.0";
constexpr const char* kConfigEnv = "SOLARMAP_CONFIG";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { kNumber, kInteger, kBool, kString, kList };

struct KeySpec {
  const char* name;
  Kind kind;
  json fallback;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool lo_open = false;
  bool hi_open = false;
  bool nullable = false;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"annotations", Kind::kString, ""},
      {"balance_classes", Kind::kBool, true},
      {"calibration_region", Kind::kString, ""},
      {"capacity_model", Kind::kString, ""},
      {"capacity_report", Kind::kString, ""},
      {"confidence", Kind::kString, ""},
      {"crop_padding", Kind::kNumber, 20.0, 0.0, kInf},
      {"epochs", Kind::kInteger, 300, 0, 1e6},
      {"excluded_regions", Kind::kList, json::array()},
      {"folds", Kind::kInteger, 2, 2, 1e6},
      {"gsd", Kind::kNumber, nullptr, 0.0, kInf, true, false, true},
      {"host", Kind::kString, "127.0.0.1"},
      {"iou_min", Kind::kNumber, 0.5, 0.0, 1.0, true, false},
      {"known_capacity", Kind::kNumber, nullptr, 0.0, kInf, true, false, true},
      {"l2", Kind::kNumber, 0.0, 0.0, kInf},
      {"learning_rate", Kind::kNumber, 2.0, 0.0, kInf, true, false},
      {"masks", Kind::kString, ""},
      {"merge_distance", Kind::kNumber, 1.8, 0.0, kInf},
      {"min_installation_pixels", Kind::kInteger, 4, 1, 1e12},
      {"model", Kind::kString, ""},
      {"out", Kind::kString, "out"},
      {"outlier_z", Kind::kNumber, 3.0, 0.0, kInf, true, false},
      {"port", Kind::kInteger, 8080, 0, 65535},
      {"predictions", Kind::kString, ""},
      {"regions", Kind::kString, ""},
      {"samples", Kind::kString, ""},
      {"seed", Kind::kInteger, 0, 0, 9.007199254740991e15},
      {"session", Kind::kString, ""},
      {"store", Kind::kString, ""},
      {"synth_capacity_noise", Kind::kNumber, 0.05, 0.0, 1.0, false, true},
      {"synth_gamma", Kind::kNumber, 0.15, 0.0, kInf, true, false},
      {"synth_style", Kind::kString, "default"},
      {"synth_tiles", Kind::kInteger, 8, 1, 1e6},
      {"threshold", Kind::kNumber, 0.5, 0.0, 1.0},
      {"tiles", Kind::kString, ""},
      {"window_radius", Kind::kInteger, 1, 1, 64},
      {"workers", Kind::kInteger, 1, 1, 1024},
  };
  return keys;
}

const KeySpec& spec_for(const std::string& key) {
  for (const auto& k : schema()) {
    if (key == k.name) return k;
  }
  throw UsageError("unknown configuration key '" + key + "'");
}

void check_value(const KeySpec& k, const json& v) {
  const std::string name = k.name;
  if (v.is_null()) {
    if (k.nullable) return;
    throw UsageError("configuration key '" + name + "' cannot be null");
  }
  switch (k.kind) {
    case Kind::kBool:
      if (!v.is_boolean()) throw UsageError("configuration key '" + name + "' must be a boolean");
      return;
    case Kind::kString:
      if (!v.is_string()) throw UsageError("configuration key '" + name + "' must be a string");
      return;
    case Kind::kList:
      if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); })) {
        throw UsageError("configuration key '" + name + "' must be a list of strings");
      }
      return;
    case Kind::kInteger:
      if (!v.is_number_integer()) {
        throw UsageError("configuration key '" + name + "' must be an integer");
      }
      break;
    case Kind::kNumber:
      if (!v.is_number()) throw UsageError("configuration key '" + name + "' must be a number");
      break;
  }
  const double x = v.get<double>();
  const bool below = k.lo_open ? !(x > k.lo) : !(x >= k.lo);
  const bool above = k.hi_open ? !(x < k.hi) : !(x <= k.hi);
  if (below || above) {
    std::ostringstream msg;
    msg << "configuration key '" << name << "' = " << v.dump() << " is outside "
        << (k.lo_open ? "(" : "[") << k.lo << ", " << k.hi << (k.hi_open ? ")" : "]");
    throw UsageError(msg.str());
  }
}

json parse_override(const KeySpec& k, const std::string& text) {
  const std::string name = k.name;
  if (k.nullable && text == "null") return nullptr;
  switch (k.kind) {
    case Kind::kString: return text;
    case Kind::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw UsageError("--set " + name + " expects true or false, got '" + text + "'");
    case Kind::kList: {
      json out = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
      }
      return out;
    }
    case Kind::kInteger: {
      long long v = 0;
      const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) {
        throw UsageError("--set " + name + " expects an integer, got '" + text + "'");
      }
      return v;
    }
    case Kind::kNumber: {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) {
        throw UsageError("--set " + name + " expects a number, got '" + text + "'");
      }
      return v;
    }
  }
  return nullptr;
}

// Resolved configuration. Precedence, lowest first: built-in defaults, the
// config file, --set overrides, then the dedicated --workers/--seed/--out
// flags.
class Config {
 public:
  Config() {
    for (const auto& k : schema()) values_[k.name] = k.fallback;
  }

  void merge_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw UsageError("config file " + path.string() + " must hold a JSON object");
    }
    for (const auto& [key, value] : j.items()) set(key, value);
  }

  void set(const std::string& key, json value) {
    const KeySpec& k = spec_for(key);
    if (k.kind == Kind::kNumber && value.is_number()) value = value.get<double>();
    check_value(k, value);
    values_[key] = std::move(value);
  }

  void set_text(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    set(key, parse_override(spec_for(key), assignment.substr(eq + 1)));
  }

  double number(const std::string& key) const { return values_.at(key).get<double>(); }
  std::optional<double> optional_number(const std::string& key) const {
    const json& v = values_.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  }
  long long integer(const std::string& key) const { return values_.at(key).get<long long>(); }
  bool boolean(const std::string& key) const { return values_.at(key).get<bool>(); }
  std::string string(const std::string& key) const { return values_.at(key).get<std::string>(); }
  std::vector<std::string> list(const std::string& key) const {
    return values_.at(key).get<std::vector<std::string>>();
  }

  /// A path that must be configured; an empty value is a usage error.
  fs::path path(const std::string& key, const char* subcommand) const {
    const std::string v = string(key);
    if (v.empty()) {
      throw UsageError(std::string(subcommand) + " needs '" + key +
                       "' (set it in the config file or with --set " + key + "=...)");
    }
    return v;
  }

  int workers() const { return static_cast<int>(integer("workers")); }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

  /// Every key except those that cannot change any output.
  json manifest_view() const {
    json j = json::object();
    for (const auto& [k, v] : values_) {
      if (k != "workers" && k != "out") j[k] = v;
    }
    return j;
  }

 private:
  std::map<std::string, json> values_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shared state of one invocation: the resolved config, the inputs read and
// the outputs written, for the manifest.
class Context {
 public:
  Context(std::string subcommand, Config cfg, std::ostream& out)
      : subcommand_(std::move(subcommand)), cfg_(std::move(cfg)), out_(out) {}

  const Config& cfg() const { return cfg_; }
  const char* name() const { return subcommand_.c_str(); }
  std::ostream& log() { return out_; }
  fs::path out_dir() const { return cfg_.string("out"); }

  fs::path existing(const std::string& key) {
    const fs::path p = cfg_.path(key, name());
    if (!fs::exists(p)) throw Error(ErrorCode::kNotFound, key + " " + p.string() + " does not exist");
    return p;
  }

  void input(const fs::path& p) {
    std::lock_guard lock(mu_);
    if (inputs_.count(p.generic_string())) return;
    const std::string bytes = read_file(p);
    inputs_[p.generic_string()] = {hex64(fnv1a(bytes)), bytes.size()};
  }

  void output(const fs::path& p) {
    std::lock_guard lock(mu_);
    outputs_.insert(p);
  }

  fs::path out_path(const fs::path& rel) {
    const fs::path p = out_dir() / rel;
    fs::create_directories(p.parent_path());
    return p;
  }

  void write_text(const fs::path& rel, const std::string& text) {
    const fs::path p = out_path(rel);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + p.string());
    output(rel);
  }

  void write_manifest() {
    const json view = cfg_.manifest_view();
    const std::string canonical = view.dump();
    json inputs = json::array();
    for (const auto& [path, d] : inputs_) {
      inputs.push_back({{"path", path}, {"fnv1a64", d.first}, {"bytes", d.second}});
    }
    json outputs = json::array();
    for (const auto& rel : outputs_) {
      const std::string bytes = read_file(out_dir() / rel);
      outputs.push_back(
          {{"path", rel.generic_string()}, {"fnv1a64", hex64(fnv1a(bytes))}, {"bytes", bytes.size()}});
    }
    const json m = {{"tool", "solarmap"},
                    {"version", kVersion},
                    {"subcommand", subcommand_},
                    {"seed", cfg_.seed()},
                    {"config_hash", hex64(fnv1a(canonical))},
                    {"config", view},
                    {"inputs", std::move(inputs)},
                    {"outputs", std::move(outputs)}};
    const fs::path p = out_path("manifest.json");
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << m.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + p.string());
  }

 private:
  std::string subcommand_;
  Config cfg_;
  std::ostream& out_;
  std::mutex mu_;
  std::map<std::string, std::pair<std::string, std::size_t>> inputs_;
  std::set<fs::path> outputs_;
};

// ---- shared loaders -------------------------------------------------------

struct Tile {
  std::string id;
  fs::path path;
  Raster raster;
};

void check_gsd(const Context& ctx, const Raster& r, const fs::path& path) {
  const auto gsd = ctx.cfg().optional_number("gsd");
  if (!gsd) return;
  const double actual = std::sqrt(r.geo().pixel_area());
  if (std::abs(actual - *gsd) > 0.01 * *gsd) {
    throw Error(ErrorCode::kRange, path.string() + " has a pixel size of " + format_double(actual) +
                                       " m, configured gsd is " + format_double(*gsd) + " m");
  }
}

std::vector<fs::path> sarf_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kNotFound, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".sarf") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Tile> load_tiles(Context& ctx, const std::string& key) {
  const fs::path dir = ctx.existing(key);
  const auto files = sarf_files(dir);
  if (files.empty()) throw Error(ErrorCode::kNotFound, "no .sarf rasters in " + dir.string());
  std::vector<Tile> tiles(files.size());
  parallel_for(files.size(), ctx.cfg().workers(), [&](std::size_t i) {
    ctx.input(files[i]);
    Raster r = load_raster(files[i]);
    check_gsd(ctx, r, files[i]);
    std::string id = r.tile_id().empty() ? files[i].stem().string() : r.tile_id();
    if (r.tile_id().empty()) r.set_tile_id(id);
    tiles[i] = {std::move(id), files[i], std::move(r)};
  });
  std::set<std::string> ids;
  for (const auto& t : tiles) {
    if (!ids.insert(t.id).second) throw Error(ErrorCode::kDuplicate, "duplicate tile id '" + t.id + "'");
  }
  return tiles;
}

std::vector<Tile> rgb_tiles(Context& ctx) {
  auto tiles = load_tiles(ctx, "tiles");
  for (const auto& t : tiles) {
    if (!t.raster.is_rgb()) throw Error(ErrorCode::kFormat, t.path.string() + " is not an RGB raster");
  }
  return tiles;
}

// Truth masks rasterized from the annotations onto each tile's grid.
std::vector<LabeledTile> labeled(Context& ctx, const std::vector<Tile>& tiles) {
  const fs::path ann_path = ctx.existing("annotations");
  ctx.input(ann_path);
  const auto sets = load_annotations_by_tile(ann_path);
  std::map<std::string, const AnnotationSet*> by_tile;
  for (const auto& s : sets) by_tile[s.tile_id] = &s;
  for (const auto& s : sets) {
    if (std::none_of(tiles.begin(), tiles.end(), [&](const Tile& t) { return t.id == s.tile_id; })) {
      throw Error(ErrorCode::kNotFound, "annotations refer to tile '" + s.tile_id +
                                            "', which is not among the tiles");
    }
  }
  std::vector<LabeledTile> out(tiles.size());
  parallel_for(tiles.size(), ctx.cfg().workers(), [&](std::size_t i) {
    const Raster& img = tiles[i].raster;
    std::vector<Polygon> polys;
    if (auto it = by_tile.find(tiles[i].id); it != by_tile.end()) {
      for (const auto& a : it->second->polygons) polys.push_back(a.polygon);
    }
    Raster mask = rasterize(polys, img.geo(), img.width(), img.height());
    mask.set_tile_id(tiles[i].id);
    out[i] = {img, std::move(mask)};
  });
  return out;
}

TrainConfig train_config(const Config& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.number("learning_rate");
  t.epochs = static_cast<int>(cfg.integer("epochs"));
  t.seed = cfg.seed();
  t.l2 = cfg.number("l2");
  t.balance_classes = cfg.boolean("balance_classes");
  t.workers = cfg.workers();
  return t;
}

PixelFeatureSpec feature_spec(const Config& cfg) {
  PixelFeatureSpec s;
  s.window_radius = static_cast<int>(cfg.integer("window_radius"));
  return s;
}

ExtractOptions extract_options(const Config& cfg) {
  ExtractOptions o;
  o.merge_distance = cfg.number("merge_distance");
  o.min_pixels = static_cast<std::size_t>(cfg.integer("min_installation_pixels"));
  return o;
}

std::vector<Region> regions(Context& ctx) {
  const fs::path p = ctx.existing("regions");
  ctx.input(p);
  return load_regions(p);
}

std::vector<Installation> predictions(Context& ctx) {
  const fs::path p = ctx.existing("predictions");
  ctx.input(p);
  return load_installations(p);
}

SegmenterModel model(Context& ctx) {
  const fs::path p = ctx.existing("model");
  ctx.input(p);
  return load_model(p);
}

void save_model_output(Context& ctx, const SegmenterModel& m) {
  const fs::path p = ctx.out_path("model.json");
  save_model(m, p);
  ctx.output("model.json");
}

std::string final_loss_text(const SegmenterModel& m) {
  return m.train_log.empty() ? std::string("n/a") : format_double(m.train_log.back());
}

// ---- subcommands ------------------------------------------------------------

void cmd_synth(Context& ctx) {
  const Config& cfg = ctx.cfg();
  SceneConfig scene_cfg;
  const std::string style = cfg.string("synth_style");
  if (style == "shifted") {
    scene_cfg.style = shifted_style();
  } else if (style != "default") {
    throw UsageError("synth_style must be 'default' or 'shifted', got '" + style + "'");
  }
  if (auto gsd = cfg.optional_number("gsd")) scene_cfg.gsd = *gsd;
  const auto count = static_cast<std::size_t>(cfg.integer("synth_tiles"));
  const auto scene = make_scene(scene_cfg, count, cfg.seed());
  std::vector<AnnotationSet> truth;
  for (const auto& s : scene) {
    const fs::path img = fs::path("tiles") / (s.truth.tile_id + ".sarf");
    const fs::path mask = fs::path("masks") / (s.truth.tile_id + ".sarf");
    save_raster(s.tile.image, ctx.out_path(img));
    save_raster(s.tile.mask, ctx.out_path(mask));
    ctx.output(img);
    ctx.output(mask);
    truth.push_back(s.truth);
  }
  save_annotations(truth, ctx.out_path("annotations.ndjson"));
  ctx.output("annotations.ndjson");
  const auto regs = make_regions(scene, cfg.number("synth_gamma"),
                                 cfg.number("synth_capacity_noise"), cfg.seed());
  save_regions(regs, ctx.out_path("regions.ndjson"));
  ctx.output("regions.ndjson");
  ctx.log() << "synth: wrote " << scene.size() << " tiles to " << ctx.out_dir().string() << '\n';
}

void cmd_train(Context& ctx) {
  const auto tiles = rgb_tiles(ctx);
  const auto data = labeled(ctx, tiles);
  const SegmenterModel m = train(data, train_config(ctx.cfg()), feature_spec(ctx.cfg()));
  save_model_output(ctx, m);
  ctx.log() << "train: " << data.size() << " tiles, final loss " << final_loss_text(m) << '\n';
}

void cmd_finetune(Context& ctx) {
  const SegmenterModel base = model(ctx);
  const auto tiles = rgb_tiles(ctx);
  const auto data = labeled(ctx, tiles);
  const SegmenterModel m = finetune(base, data, train_config(ctx.cfg()));
  save_model_output(ctx, m);
  ctx.log() << "finetune: " << data.size() << " tiles, final loss " << final_loss_text(m) << '\n';
}

void cmd_infer(Context& ctx) {
  const SegmenterModel m = model(ctx);
  const auto tiles = rgb_tiles(ctx);
  parallel_for(tiles.size(), ctx.cfg().workers(), [&](std::size_t i) {
    const fs::path rel = fs::path("confidence") / (tiles[i].id + ".sarf");
    save_raster(infer(m, tiles[i].raster), ctx.out_path(rel));
    ctx.output(rel);
  });
  ctx.log() << "infer: " << tiles.size() << " confidence maps\n";
}

void cmd_extract(Context& ctx) {
  const auto conf = load_tiles(ctx, "confidence");
  std::map<std::string, const Raster*> images;
  std::vector<Tile> rgb;
  if (!ctx.cfg().string("tiles").empty()) {
    rgb = rgb_tiles(ctx);
    for (const auto& t : rgb) images[t.id] = &t.raster;
  }
  const double t = ctx.cfg().number("threshold");
  const ExtractOptions opts = extract_options(ctx.cfg());
  std::vector<std::vector<Installation>> per_tile(conf.size());
  parallel_for(conf.size(), ctx.cfg().workers(), [&](std::size_t i) {
    if (!conf[i].raster.is_confidence()) {
      throw Error(ErrorCode::kFormat, conf[i].path.string() + " is not a confidence raster");
    }
    const Raster mask = threshold(conf[i].raster, t);
    const fs::path rel = fs::path("masks") / (conf[i].id + ".sarf");
    save_raster(mask, ctx.out_path(rel));
    ctx.output(rel);
    per_tile[i] = extract_installations(mask, opts);
    if (auto it = images.find(conf[i].id); it != images.end()) {
      attach_mean_colors(per_tile[i], *it->second);
    }
  });
  std::vector<Installation> all;
  for (auto& v : per_tile) std::move(v.begin(), v.end(), std::back_inserter(all));
  save_installations(all, ctx.out_path("installations.ndjson"));
  ctx.output("installations.ndjson");
  ctx.log() << "extract: " << all.size() << " installations from " << conf.size() << " tiles\n";
}

void cmd_score(Context& ctx) {
  const auto masks = load_tiles(ctx, "masks");
  for (const auto& m : masks) {
    if (!m.raster.is_mask()) throw Error(ErrorCode::kFormat, m.path.string() + " is not a mask");
  }
  const auto truth = labeled(ctx, masks);
  const ExtractOptions opts = extract_options(ctx.cfg());
  const double iou_min = ctx.cfg().number("iou_min");
  std::vector<TileScore> scores(masks.size());
  parallel_for(masks.size(), ctx.cfg().workers(), [&](std::size_t i) {
    scores[i] = score_tile(masks[i].raster, truth[i].mask, opts, iou_min);
  });
  const ScoreReport report = summarize(std::move(scores));
  ctx.write_text("score.json", to_json(report));
  ctx.log() << "score: pixel iou " << format_double(report.pixel.iou) << '\n';
}

void cmd_crossval(Context& ctx) {
  const auto tiles = rgb_tiles(ctx);
  const auto data = labeled(ctx, tiles);
  CrossValConfig cv;
  cv.folds = static_cast<int>(ctx.cfg().integer("folds"));
  cv.seed = ctx.cfg().seed();
  cv.train = train_config(ctx.cfg());
  cv.features = feature_spec(ctx.cfg());
  cv.threshold = ctx.cfg().number("threshold");
  cv.extract = extract_options(ctx.cfg());
  cv.iou_min = ctx.cfg().number("iou_min");
  cv.workers = ctx.cfg().workers();
  const CrossValResult r = crossval(data, cv);
  ctx.write_text("crossval.json", to_json(r));
  const PRF p = prf(r.objects);
  ctx.log() << "crossval: pixel iou " << format_double(r.pixel.iou) << ", object f1 "
            << (p.f1 ? format_double(*p.f1) : std::string("undefined")) << '\n';
}

void cmd_capacity_calibrate(Context& ctx) {
  const auto insts = predictions(ctx);
  const auto regs = regions(ctx);
  const std::string name = ctx.cfg().string("calibration_region");
  if (name.empty()) throw UsageError("capacity-calibrate needs 'calibration_region'");
  const auto it = std::find_if(regs.begin(), regs.end(), [&](const Region& r) { return r.name == name; });
  if (it == regs.end()) throw Error(ErrorCode::kNotFound, "unknown region '" + name + "'");
  std::optional<double> known = ctx.cfg().optional_number("known_capacity");
  if (!known) known = it->reported_capacity;
  if (!known) {
    throw Error(ErrorCode::kNotFound,
                "region '" + name + "' has no reported capacity and known_capacity is not set");
  }
  std::vector<Installation> inside;
  for (const auto& i : insts) {
    if (point_in_polygon(i.centroid, it->boundary)) inside.push_back(i);
  }
  const CapacityModel m = calibrate_fixed(inside, *known, name);
  save_capacity_model(m, ctx.out_path("capacity_model.json"));
  ctx.output("capacity_model.json");
  ctx.log() << "capacity-calibrate: gamma " << format_double(m.gamma) << " kW/m^2 from "
            << inside.size() << " installations\n";
}

void cmd_capacity_fit_color(Context& ctx) {
  const fs::path p = ctx.existing("samples");
  ctx.input(p);
  const auto samples = load_capacity_samples(p);
  const CapacityModel m = fit_color_model(samples);
  save_capacity_model(m, ctx.out_path("capacity_model.json"));
  ctx.output("capacity_model.json");
  ctx.log() << "capacity-fit-color: " << samples.size() << " samples\n";
}

void cmd_capacity_aggregate(Context& ctx) {
  const auto insts = predictions(ctx);
  const auto regs = regions(ctx);
  const fs::path mp = ctx.existing("capacity_model");
  ctx.input(mp);
  const CapacityModel m = load_capacity_model(mp);
  AggregateOptions opts;
  opts.excluded_regions = ctx.cfg().list("excluded_regions");
  opts.workers = ctx.cfg().workers();
  const CapacityReport report = aggregate(insts, regs, m, opts);
  ctx.write_text("capacity.json", to_json(report));
  ctx.write_text("capacity.csv", to_csv(report));
  ctx.log() << "capacity-aggregate: " << report.per_region.size() << " regions, "
            << report.unassigned.size() << " unassigned installations\n";
}

CapacityReport read_capacity_report(const fs::path& path) {
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("per_region")) {
    throw Error(ErrorCode::kFormat, path.string() + " is not a capacity report");
  }
  CapacityReport r;
  try {
    for (const auto& e : j.at("per_region")) {
      RegionCapacity rc;
      rc.name = e.at("name").get<std::string>();
      rc.estimated_kw = e.at("estimated_kw").get<double>();
      if (!e.at("reported_kw").is_null()) rc.reported_kw = e.at("reported_kw").get<double>();
      rc.installations = e.value("installations", std::size_t{0});
      rc.excluded = e.value("excluded", false);
      r.per_region.push_back(std::move(rc));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  return r;
}

void cmd_correlate(Context& ctx) {
  const fs::path p = ctx.existing("capacity_report");
  ctx.input(p);
  CapacityReport report = read_capacity_report(p);
  std::set<std::string> extra;
  for (const auto& name : ctx.cfg().list("excluded_regions")) extra.insert(name);
  for (auto& r : report.per_region) r.excluded = r.excluded || extra.erase(r.name) > 0;
  if (!extra.empty()) {
    throw Error(ErrorCode::kNotFound, "excluded region '" + *extra.begin() + "' is not in the report");
  }
  std::vector<double> est, rep;
  json excluded = json::array();
  for (const auto& r : report.per_region) {
    if (r.excluded) {
      excluded.push_back(r.name);
      continue;
    }
    if (!r.reported_kw) continue;
    est.push_back(r.estimated_kw);
    rep.push_back(*r.reported_kw);
  }
  std::optional<double> rr;
  if (est.size() >= 2) rr = pearson(est, rep);
  json flags = json::array();
  std::string flag_note;
  try {
    for (const auto& f : detect_outliers(report, ctx.cfg().number("outlier_z"))) {
      flags.push_back({{"region", f.region}, {"studentized_residual", f.studentized_residual}});
    }
  } catch (const Error& e) {
    flag_note = e.what();
  }
  json out = {{"n", est.size()},
              {"pearson_r", rr ? json(*rr) : json(nullptr)},
              {"excluded", std::move(excluded)},
              {"outlier_z", ctx.cfg().number("outlier_z")},
              {"flagged", std::move(flags)}};
  if (!flag_note.empty()) out["flagging_skipped"] = flag_note;
  ctx.write_text("correlation.json", out.dump(2));
  ctx.log() << "correlate: r = " << (rr ? format_double(*rr) : std::string("undefined")) << " over "
            << est.size() << " regions\n";
}

review::StoreConfig store_config(Context& ctx, bool need_imagery) {
  review::StoreConfig sc;
  sc.root = ctx.cfg().path("store", ctx.name());
  if (need_imagery) {
    sc.tiles_dir = ctx.existing("tiles");
    sc.regions = regions(ctx);
  }
  sc.crop_padding = ctx.cfg().number("crop_padding");
  return sc;
}

void cmd_review_export(Context& ctx) {
  const fs::path root = ctx.existing("store");
  const std::string id = ctx.cfg().string("session");
  if (id.empty()) throw UsageError("review-export needs 'session'");
  review::SessionStore store(store_config(ctx, false));
  const fs::path log = store.log_path(id);
  if (!fs::exists(log)) throw Error(ErrorCode::kNotFound, "no session '" + id + "' in " + root.string());
  ctx.input(log);
  const review::ReviewSession s = store.get(id);
  ctx.write_text("review_session.json", review::to_json(s));
  std::string lines;
  for (const auto& v : s.verdicts()) {
    lines += json({{"candidate", v.candidate_id}, {"label", to_string(v.label)}, {"note", v.note}}).dump();
    lines += '\n';
  }
  ctx.write_text("review_verdicts.ndjson", lines);
  try {
    ctx.write_text("review_metrics.json", to_json(store.metrics(id)));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kState) throw;
    ctx.log() << "review-export: metrics skipped, " << e.what() << '\n';
  }
  ctx.log() << "review-export: session " << id << ", " << s.decisions.size() << " of "
            << s.candidates.size() << " candidates decided\n";
}

void cmd_serve(Context& ctx) {
  review::SessionStore store(store_config(ctx, true));
  review::ReviewServer server(store);
  const std::string host = ctx.cfg().string("host");
  const int port = static_cast<int>(ctx.cfg().integer("port"));
  ctx.log() << "serve: listening on http://" << host << ':' << port << std::endl;
  server.run(host, port);
}

struct Command {
  const char* name;
  const char* help;
  void (*fn)(Context&);
  bool manifest = true;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds = {
      {"train", "Train the segmenter on labeled tiles", cmd_train},
      {"finetune", "Continue training an existing model on local labels", cmd_finetune},
      {"infer", "Write a confidence map per tile", cmd_infer},
      {"extract", "Threshold confidence maps and group pixels into installations", cmd_extract},
      {"score", "Score predicted masks against annotations", cmd_score},
      {"crossval", "K-fold cross-validation of the full pipeline", cmd_crossval},
      {"capacity-calibrate", "Fit a fixed capacity density from one region", cmd_capacity_calibrate},
      {"capacity-fit-color", "Fit capacity density against array color", cmd_capacity_fit_color},
      {"capacity-aggregate", "Estimate capacity per installation and region", cmd_capacity_aggregate},
      {"correlate", "Correlate estimated and reported regional capacity", cmd_correlate},
      {"review-export", "Export a review session, its verdicts and metrics", cmd_review_export},
      {"synth", "Generate a synthetic labeled scene", cmd_synth},
      {"serve", "Run the review HTTP service", cmd_serve, false},
  };
  return cmds;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : schema()) out.emplace_back(k.name);
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Solar array mapping pipeline", "solarmap"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<long long> workers;
  std::optional<long long> seed;
  std::optional<std::string> out_dir;
  std::string keys_footer = "Configuration keys:";
  for (const auto& k : schema()) keys_footer += std::string(" ") + k.name;
  keys_footer += "\nPrecedence: defaults < config file < --set < --workers/--seed/--out.";
  keys_footer += std::string("\n") + kConfigEnv + " names the config file when --config is absent.";
  app.footer(keys_footer);

  std::map<CLI::App*, const Command*> by_app;
  for (const auto& c : commands()) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--set", sets, "Override one key, key=value (repeatable)");
    sub->add_option("--workers", workers, "Worker threads; outputs do not depend on it");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--out", out_dir, "Output directory");
    by_app[sub] = &c;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Command* cmd = nullptr;
  for (const auto& [sub, c] : by_app) {
    if (sub->parsed()) cmd = c;
  }

  Config cfg;
  try {
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnv); env && *env) config_path = env;
    }
    if (!config_path.empty()) cfg.merge_file(config_path);
    for (const auto& s : sets) cfg.set_text(s);
    if (workers) cfg.set("workers", *workers);
    if (seed) cfg.set("seed", *seed);
    if (out_dir) cfg.set("out", *out_dir);
  } catch (const UsageError& e) {
    err << "solarmap " << cmd->name << ": " << e.what() << '\n';
    return kExitUsage;
  }

  Context ctx(cmd->name, std::move(cfg), out);
  try {
    cmd->fn(ctx);
    if (cmd->manifest) ctx.write_manifest();
  } catch (const UsageError& e) {
    err << "solarmap " << cmd->name << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "solarmap " << cmd->name << ": " << to_string(e.code()) << ": " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "solarmap " << cmd->name << ": " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace solarmap::cli
