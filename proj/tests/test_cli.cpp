#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geodepth/cli.hpp"
#include "test_support.hpp"

using namespace geodepth;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "geodepth");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

/// synth -> preprocess -> train(10) -> infer -> eval under `dir`.
void smoke_chain(const std::string& dir) {
  auto r = run_cli({"synth", "--seed", "7", "--frames", "12", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"preprocess", "--seed", "7", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"train", "--seed", "7", "--steps", "10", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"infer", "--frames", "0,5", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"eval", "--seed", "7", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
}

}  // namespace

TEST(Cli, SmokeChainProducesEveryArtifact) {
  const std::string dir = oracle::scratch_dir("cli_smoke");
  smoke_chain(dir);
  EXPECT_TRUE(fs::exists(fs::path(dir) / "synth" / "frames" / "000011.png"));
  const auto manifest = nlohmann::json::parse(slurp(fs::path(dir) / "dataset" / "manifest.json"));
  EXPECT_FALSE(manifest.empty());
  EXPECT_TRUE(fs::exists(fs::path(dir) / "train" / "checkpoint.ckpt"));

  std::istringstream log(slurp(fs::path(dir) / "train" / "loss_log.csv"));
  std::string line;
  int rows = -1;  // header
  while (std::getline(log, line)) rows += !line.empty();
  EXPECT_EQ(rows, 10);

  for (int f : {0, 5}) {
    char name[16];
    std::snprintf(name, sizeof(name), "%06d", f);
    EXPECT_TRUE(fs::exists(fs::path(dir) / "pred" / (std::string(name) + ".pfm")));
    EXPECT_TRUE(fs::exists(fs::path(dir) / "pred" / (std::string(name) + ".png")));
  }
  EXPECT_FALSE(fs::exists(fs::path(dir) / "pred" / "000001.pfm"));

  const auto metrics = nlohmann::json::parse(slurp(fs::path(dir) / "metrics.json"));
  EXPECT_EQ(metrics["seed"], 7);
  EXPECT_EQ(metrics["frames"], 2);
  EXPECT_GT(metrics["metrics"]["abs_rel"].get<double>(), 0.0);
  EXPECT_EQ(metrics["per_frame"].size(), 2u);
}

TEST(Cli, RerunIntoFreshDirectoryIsByteIdentical) {
  const std::string a = oracle::scratch_dir("cli_rerun_a"), b = oracle::scratch_dir("cli_rerun_b");
  smoke_chain(a);
  smoke_chain(b);
  for (const char* rel : {"train/loss_log.csv", "metrics.json", "dataset/manifest.json", "train/checkpoint.ckpt",
                          "pred/000005.pfm"}) {
    EXPECT_EQ(slurp(fs::path(a) / rel), slurp(fs::path(b) / rel)) << rel;
  }
}

TEST(Cli, MissingCheckpointNamesPath) {
  const std::string dir = oracle::scratch_dir("cli_missing");
  const auto r = run_cli({"infer", "--checkpoint", "missing.ckpt", "--out", dir});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing.ckpt"), std::string::npos) << r.err;
}

TEST(Cli, MissingInputDirectoryNamesPath) {
  const std::string dir = oracle::scratch_dir("cli_noinput");
  const auto r = run_cli({"preprocess", "--input", "nowhere", "--out", dir});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos) << r.err;
}

TEST(Cli, BadFlagsAndKeysExitOne) {
  const std::string dir = oracle::scratch_dir("cli_bad");
  EXPECT_EQ(run_cli({"train", "--bogus", "--out", dir}).code, 1);
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"train", "--geotag", "maybe", "--out", dir}).code, 1);
  EXPECT_EQ(run_cli({"train", "--steps", "ten", "--out", dir}).code, 1);
  const auto typo = run_cli({"synth", "--out", dir, "sed=3"});
  EXPECT_EQ(typo.code, 1);
  EXPECT_NE(typo.err.find("sed"), std::string::npos);
  EXPECT_EQ(run_cli({"synth", "--out", dir, "--family", "sphere"}).code, 1);
  EXPECT_EQ(run_cli({"synth", "--out", dir, "--config", "/nonexistent/x.cfg"}).code, 1);
}

TEST(Cli, HelpOnEverySubcommandListsFlagsAndKeys) {
  for (const char* sub : {"synth", "preprocess", "train", "infer", "eval", "ab"}) {
    const auto r = run_cli({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    for (const char* flag : {"--config", "--out", "--seed", "--steps", "--geotag"}) {
      EXPECT_NE(r.out.find(flag), std::string::npos) << sub << " " << flag;
    }
    for (const auto& key : cli::all_config_keys()) EXPECT_NE(r.out.find(key), std::string::npos) << sub << " " << key;
  }
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, ConfigFileAndOverridesCombine) {
  const std::string dir = oracle::scratch_dir("cli_cfg");
  std::ofstream(dir + "/s.cfg") << "seed = 2\nsynth_frames = 4\nsynth_family = corridor\n";
  auto r = run_cli({"synth", "--config", dir + "/s.cfg", "--out", dir, "synth_frames=3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto scene = nlohmann::json::parse(slurp(fs::path(dir) / "synth" / "scene.json"));
  EXPECT_EQ(scene["total_frames"], 3);
  EXPECT_EQ(scene["seed"], 2);
  EXPECT_EQ(scene["sequences"][0]["family"], "corridor");
  // Explicit flags beat the file.
  r = run_cli({"synth", "--config", dir + "/s.cfg", "--out", dir + "/b", "--seed", "9", "--frames", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto b = nlohmann::json::parse(slurp(fs::path(dir) / "b" / "synth" / "scene.json"));
  EXPECT_EQ(b["total_frames"], 5);
  EXPECT_EQ(b["seed"], 9);
}
