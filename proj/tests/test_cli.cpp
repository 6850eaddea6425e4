#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>

#include "oracles.hpp"
#include "pipeline.hpp"

namespace {

using nlohmann::json;
using pipeline::solarmap;
namespace fs = std::filesystem;

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

TEST(Cli, NoSubcommandIsUsageError) {
  EXPECT_EQ(solarmap({}).code, solarmap::cli::kExitUsage);
  EXPECT_EQ(solarmap({"frobnicate"}).code, solarmap::cli::kExitUsage);
}

TEST(Cli, UnknownConfigKeyIsRejectedByName) {
  const fs::path dir = oracle::temp_dir("cli_unknown_key");
  write_text(dir / "cfg.json", R"({"thresold": 0.4})");
  const auto r = solarmap({"extract", "--config", (dir / "cfg.json").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, solarmap::cli::kExitUsage);
  EXPECT_NE(r.err.find("thresold"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "o"));
  const auto s = solarmap({"extract", "--set", "thresold=0.4"});
  EXPECT_EQ(s.code, solarmap::cli::kExitUsage);
  EXPECT_NE(s.err.find("thresold"), std::string::npos);
}

TEST(Cli, OutOfRangeAndMistypedValuesAreUsageErrors) {
  EXPECT_EQ(solarmap({"extract", "--set", "threshold=1.5"}).code, solarmap::cli::kExitUsage);
  EXPECT_EQ(solarmap({"extract", "--set", "epochs=many"}).code, solarmap::cli::kExitUsage);
  EXPECT_EQ(solarmap({"extract", "--workers", "0"}).code, solarmap::cli::kExitUsage);
}

TEST(Cli, MissingInputIsDataError) {
  const fs::path dir = oracle::temp_dir("cli_missing");
  const auto r = solarmap({"extract", "--set", "confidence=" + (dir / "nope").string(), "--out",
                           (dir / "o").string()});
  EXPECT_EQ(r.code, solarmap::cli::kExitData);
  EXPECT_EQ(solarmap({"extract", "--out", (dir / "o").string()}).code, solarmap::cli::kExitUsage);
}

TEST(Cli, FlagsOverrideSetOverrideConfigFile) {
  const fs::path dir = oracle::temp_dir("cli_precedence");
  write_text(dir / "cfg.json", R"({"synth_tiles": 2, "seed": 5, "synth_gamma": 0.2, "out": "ignored"})");
  const std::string cfg = (dir / "cfg.json").string();

  ASSERT_EQ(solarmap({"synth", "--config", cfg, "--out", (dir / "a").string()}).code, 0);
  json m = read_json(dir / "a" / "manifest.json");
  EXPECT_EQ(m["config"]["synth_tiles"], 2);
  EXPECT_EQ(m["seed"], 5);
  EXPECT_EQ(m["config"]["synth_gamma"], 0.2);

  ASSERT_EQ(solarmap({"synth", "--config", cfg, "--set", "seed=6", "--set", "synth_tiles=1", "--out",
                      (dir / "b").string()})
                .code,
            0);
  m = read_json(dir / "b" / "manifest.json");
  EXPECT_EQ(m["seed"], 6);
  EXPECT_EQ(m["config"]["synth_tiles"], 1);
  EXPECT_EQ(m["config"]["synth_gamma"], 0.2);

  ASSERT_EQ(solarmap({"synth", "--config", cfg, "--set", "seed=6", "--seed", "7", "--set", "synth_tiles=1",
                      "--out", (dir / "c").string()})
                .code,
            0);
  EXPECT_EQ(read_json(dir / "c" / "manifest.json")["seed"], 7);
  EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST(Cli, EnvironmentNamesDefaultConfig) {
  const fs::path dir = oracle::temp_dir("cli_env");
  write_text(dir / "cfg.json", R"({"synth_tiles": 1, "seed": 9})");
  ::setenv("SOLARMAP_CONFIG", (dir / "cfg.json").c_str(), 1);
  const auto r = solarmap({"synth", "--out", (dir / "o").string()});
  ::unsetenv("SOLARMAP_CONFIG");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "o" / "manifest.json")["seed"], 9);
}

TEST(Cli, SeparableSceneScoresPerfectlyEndToEnd) {
  const fs::path root = oracle::temp_dir("cli_e2e");
  ASSERT_EQ(pipeline::run_all(root, 1), "");
  const json score = read_json(root / "score" / "score.json");
  EXPECT_EQ(score["aggregate"]["pixel"]["iou"], 1.0);
  EXPECT_EQ(score["aggregate"]["objects"]["f1"], 1.0);
  const json m = read_json(root / "score" / "manifest.json");
  EXPECT_EQ(m["subcommand"], "score");
  EXPECT_FALSE(m["inputs"].empty());
  EXPECT_EQ(m["config_hash"].get<std::string>().size(), 16u);
  const json cal = read_json(root / "calibrate" / "capacity_model.json");
  EXPECT_EQ(cal["kind"], "fixed");
  const json corr = read_json(root / "correlate" / "correlation.json");
  EXPECT_EQ(corr["n"], 4);
}

TEST(Cli, OutputsAreIndependentOfWorkerCount) {
  const fs::path base = oracle::temp_dir("cli_determinism");
  ASSERT_EQ(pipeline::run_all(base / "w1", 1), "");
  ASSERT_EQ(pipeline::run_all(base / "w8", 8), "");
  ASSERT_EQ(pipeline::run_all(base / "w1b", 1), "");
  const auto a = pipeline::snapshot(base / "w1");
  const auto b = pipeline::snapshot(base / "w8");
  const auto c = pipeline::snapshot(base / "w1b");
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [path, bytes] : a) {
    ASSERT_TRUE(b.count(path)) << path;
    EXPECT_TRUE(b.at(path) == bytes) << path;
    EXPECT_TRUE(c.at(path) == bytes) << path;
  }
}

TEST(Cli, ConfigKeysAreSorted) {
  const auto keys = solarmap::cli::config_keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_NE(std::find(keys.begin(), keys.end(), "threshold"), keys.end());
}

TEST(Cli, Fnv1aKnownVectors) {
  EXPECT_EQ(solarmap::cli::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(solarmap::cli::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

}  // namespace
