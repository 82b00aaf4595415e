#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "layerfit/checkpoint.hpp"

#ifndef LAYERFIT_CLI_PATH
#define LAYERFIT_CLI_PATH "layerfit"
#endif

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(LAYERFIT_CLI_PATH) + " " + args + " 2>/dev/null";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

// Each gtest case may run in its own process; the workspace lives in the
// temp dir and is populated lazily so cases are order-independent.
struct CliWorkspace {
  fs::path root;

  CliWorkspace() {
    root = fs::temp_directory_path() / "layerfit_cli_test";
    fs::create_directories(root);
    if (!fs::exists(root / "config.json"))
      std::ofstream(root / "config.json") << R"({
      "data": {"size": 32, "seed": 3},
      "model": {"gol": {"channels": [2,2,3,3,3]},
                 "unet": {"base_channels": 4, "temb_dim": 8},
                 "schedule_steps": 40},
      "train": {"steps": 12, "batch_size": 2, "seed": 5},
      "sample": {"sampler": "ddim", "ddim_steps": 6, "seed": 9}
    })";
  }

  std::string cfg() const { return (root / "config.json").string(); }
  std::string data() const { return (root / "data").string(); }
  std::string run() const { return (root / "run").string(); }

  void ensure_dataset() {
    if (!fs::exists(fs::path(data()) / "manifest.json"))
      ASSERT_EQ(run_cli("gen-data --config " + cfg() + " --out " + data() +
                        " --count 10"),
                0);
  }
};

CliWorkspace& workspace() {
  static CliWorkspace ws;
  return ws;
}

std::string dir_digest(const fs::path& dir) {
  std::string digest;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    digest += f.filename().string() + ":" + layerfit::file_hash_hex(f) + "\n";
  return digest;
}

}  // namespace

TEST(Cli, GenerateTrainInferEvalPipeline) {
  CliWorkspace& ws = workspace();
  fs::remove_all(ws.data());
  ASSERT_EQ(run_cli("gen-data --config " + ws.cfg() + " --out " + ws.data() +
                    " --count 10"),
            0);
  ASSERT_TRUE(fs::exists(fs::path(ws.data()) / "manifest.json"));

  ASSERT_EQ(run_cli("train --config " + ws.cfg() + " --data " + ws.data() +
                    " --out " + ws.run()),
            0);
  ASSERT_TRUE(fs::exists(fs::path(ws.run()) / "checkpoint.lft"));
  ASSERT_TRUE(fs::exists(fs::path(ws.run()) / "loss.csv"));
  ASSERT_TRUE(fs::exists(fs::path(ws.run()) / "config.json"));
  ASSERT_TRUE(fs::exists(fs::path(ws.run()) / "run.json"));

  // run manifest carries version, seed, and the effective config
  std::ifstream in(fs::path(ws.run()) / "run.json");
  nlohmann::json run_manifest = nlohmann::json::parse(in);
  EXPECT_EQ(run_manifest.at("version"), "layerfit-0.1.0");
  EXPECT_TRUE(run_manifest.contains("config"));
  EXPECT_TRUE(run_manifest.contains("seed"));

  std::string ckpt = (fs::path(ws.run()) / "checkpoint.lft").string();
  std::string gen1 = (ws.root / "gen1").string();
  std::string gen2 = (ws.root / "gen2").string();
  ASSERT_EQ(run_cli("infer --checkpoint " + ckpt + " --data " + ws.data() +
                    " --out " + gen1 + " --seed 9 --count 2"),
            0);
  ASSERT_EQ(run_cli("infer --checkpoint " + ckpt + " --data " + ws.data() +
                    " --out " + gen2 + " --seed 9 --count 2"),
            0);
  // identical seed -> identical file hashes
  EXPECT_EQ(dir_digest(fs::path(gen1) / "images"), dir_digest(fs::path(gen2) / "images"));

  std::string before = dir_digest(ws.data());
  std::string evalout = (ws.root / "evalout").string();
  ASSERT_EQ(run_cli("eval --gen " + gen1 + "/images --gt " + ws.data() +
                    "/test --masks " + ws.data() + "/test --out " + evalout),
            0);
  EXPECT_TRUE(fs::exists(fs::path(evalout) / "report.json"));
  EXPECT_TRUE(fs::exists(fs::path(evalout) / "report.csv"));
  // commands never mutate the dataset directory
  EXPECT_EQ(dir_digest(ws.data()), before);
}

TEST(Cli, EvalOfGroundTruthScoresPerfectly) {
  CliWorkspace& ws = workspace();
  ws.ensure_dataset();
  fs::path flat = ws.root / "gtflat";
  fs::create_directories(flat);
  for (const auto& e : fs::directory_iterator(fs::path(ws.data()) / "test"))
    if (e.is_directory())
      fs::copy_file(e.path() / "person.png",
                    flat / (e.path().filename().string() + ".png"),
                    fs::copy_options::overwrite_existing);
  std::string evalout = (ws.root / "evalself").string();
  ASSERT_EQ(run_cli("eval --gen " + flat.string() + " --gt " + ws.data() +
                    "/test --masks " + ws.data() + "/test --out " + evalout),
            0);
  std::ifstream in(fs::path(evalout) / "report.json");
  nlohmann::json report = nlohmann::json::parse(in);
  EXPECT_DOUBLE_EQ(report.at("corpus").at("mean_lacd").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(report.at("corpus").at("mean_ssim").get<double>(), 1.0);
}

TEST(Cli, ExitCodesMatchErrorClasses) {
  CliWorkspace& ws = workspace();
  ws.ensure_dataset();
  // config error (unknown key) -> 2
  fs::path bad_cfg = ws.root / "bad.json";
  std::ofstream(bad_cfg) << R"({"data": {"bogus": 1}})";
  EXPECT_EQ(run_cli("gen-data --config " + bad_cfg.string() + " --out " +
                    (ws.root / "x").string() + " --count 2"),
            2);
  // CLI parse error -> 2
  EXPECT_EQ(run_cli("train --nope"), 2);
  // data error (missing dataset) -> 3
  EXPECT_EQ(run_cli("train --config " + ws.cfg() + " --data " +
                    (ws.root / "missing").string() + " --out " +
                    (ws.root / "y").string()),
            3);
  // checkpoint error (missing checkpoint) -> 4
  EXPECT_EQ(run_cli("infer --checkpoint " + (ws.root / "no.lft").string() +
                    " --data " + ws.data() + " --out " +
                    (ws.root / "z").string()),
            4);
}

TEST(Cli, AblationFlagSelectsConfiguration) {
  CliWorkspace& ws = workspace();
  ws.ensure_dataset();
  std::string run_base = (ws.root / "run_base").string();
  ASSERT_EQ(run_cli("train --config " + ws.cfg() + " --data " + ws.data() +
                    " --out " + run_base + " --ablation base"),
            0);
  auto tensors = layerfit::load_checkpoint(fs::path(run_base) / "checkpoint.lft");
  for (const auto& [id, t] : tensors)
    EXPECT_TRUE(id.rfind("gol.", 0) != 0) << id;  // no occlusion module params
  // effective config echoes the override
  std::ifstream in(fs::path(run_base) / "config.json");
  nlohmann::json cfg = nlohmann::json::parse(in);
  EXPECT_EQ(cfg.at("train").at("ablation"), "base");
}
