#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "app/commands.hpp"
#include "app/config.hpp"
#include "rlab/errors.hpp"
#include "rlab/vit/model.hpp"

using namespace rlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_json() {
  return json::parse(R"({
    "schema_version": 1,
    "method": "random_registers",
    "model": {"image_size": 16, "patch_size": 4, "dim": 16, "depth": 1, "heads": 2,
              "n_classes": 4, "register_count": 2},
    "train": {"epochs": 1, "batch_size": 16},
    "data": {"seed": 5, "domains": [
      {"name": "source", "class_count": 4, "images_per_class": 8, "image_size": 16},
      {"name": "shifted", "class_count": 3, "images_per_class": 6, "image_size": 16,
       "palette_rotation_deg": 60.0}
    ]},
    "eval": {"n_way": 3, "k_shot": 1, "q_queries": 2, "episodes": 5,
             "modes": ["plain", "finetune"], "finetune": {"steps": 2, "register_count": 2}},
    "analysis": {"sigmas": [0.0, 0.05], "draws": 3, "cka_samples": 6, "heatmap_images": 1},
    "seeds": [0, 1]
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "rlab");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path write_config(const fs::path& dir, const json& j) {
  fs::create_directories(dir);
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

// One full pipeline run shared by the output tests.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "rlab_cli_pipeline";
    fs::remove_all(root_);
    config_ = write_config(root_, tiny_json());
    for (const char* cmd : {"gen-data", "train", "eval", "analyze"}) {
      ASSERT_EQ(run({cmd, "--config", config_.string(), "--out", (root_ / "out").string()}), 0)
          << cmd;
    }
    const auto c = cli::parse_config(tiny_json());
    run_root_ = root_ / "out" / "runs" / c.run_name();
  }
  static fs::path root_, config_, run_root_;
};
fs::path Pipeline::root_, Pipeline::config_, Pipeline::run_root_;

}  // namespace

TEST(Config, EffectiveConfigRoundTrips) {
  const auto c = cli::parse_config(tiny_json());
  const json eff = cli::to_json(c);
  const auto back = cli::parse_config(eff);
  EXPECT_EQ(cli::to_json(back), eff);
  EXPECT_EQ(back.train_hash(), c.train_hash());
  EXPECT_EQ(c.run_name(), "random_registers-" + c.train_hash());
  EXPECT_EQ(c.train_hash().size(), 8u);
}

TEST(Config, HashCoversTrainingOnly) {
  const auto base = cli::parse_config(tiny_json()).train_hash();
  json j = tiny_json();
  j["eval"]["episodes"] = 9;
  j["seeds"] = json::array({4});
  EXPECT_EQ(cli::parse_config(j).train_hash(), base);
  j = tiny_json();
  j["train"]["epochs"] = 2;
  EXPECT_NE(cli::parse_config(j).train_hash(), base);
  j = tiny_json();
  j["data"]["seed"] = 6;
  EXPECT_NE(cli::parse_config(j).train_hash(), base);
}

TEST(Config, RejectsInvalidDocuments) {
  auto bad = [](auto edit) {
    json j = tiny_json();
    edit(j);
    return j;
  };
  const std::vector<json> cases{
      bad([](json& j) { j.erase("schema_version"); }),
      bad([](json& j) { j["schema_version"] = 2; }),
      bad([](json& j) { j["model"]["dimm"] = 3; }),
      bad([](json& j) { j["method"] = "dropout"; }),
      bad([](json& j) { j["reap"] = {{"drop_ratio", 0.5}}; }),
      bad([](json& j) { j["perturb"] = {{"sigma", 0.1}}; }),
      bad([](json& j) { j["model"]["register_mode"] = "random"; }),
      bad([](json& j) { j["model"]["n_classes"] = 5; }),
      bad([](json& j) { j["train"]["epochs"] = "two"; }),
      bad([](json& j) { j["seeds"] = json::array({1, 1}); }),
      bad([](json& j) { j["analysis"]["sigmas"] = json::array({0.1, 0.0}); }),
      bad([](json& j) { j["eval"]["n_way"] = 1; }),
      bad([](json& j) { j["data"]["domains"][1]["name"] = "source"; }),
      bad([](json& j) { j["data"]["domains"][1]["image_size"] = 32; }),
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    EXPECT_THROW(cli::parse_config(cases[i]), ConfigError) << "case " << i;
  }
  json j = tiny_json();
  j["method"] = "baseline";
  j["model"].erase("register_count");
  EXPECT_NO_THROW(cli::parse_config(j));
  j["model"]["tau_init"] = 0.2;
  EXPECT_THROW(cli::parse_config(j), ConfigError);
}

TEST(ExitCodes, UsageValidationAndRuntimeErrors) {
  const fs::path dir = fs::temp_directory_path() / "rlab_cli_exit";
  fs::remove_all(dir);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_EQ(run({"train", "--config", "x.json"}), 1);
  EXPECT_EQ(run({"train", "--config", (dir / "missing.json").string(), "--out", dir.string()}), 1);
  json j = tiny_json();
  j["model"]["heads"] = 3;
  EXPECT_EQ(run({"train", "--config", write_config(dir / "bad", j).string(), "--out",
                 dir.string()}),
            1);
  // Valid config, no data yet: a runtime failure.
  EXPECT_EQ(run({"train", "--config", write_config(dir / "ok", tiny_json()).string(), "--out",
                 dir.string()}),
            2);
}

TEST_F(Pipeline, GenDataWritesDomainsAndManifest) {
  const fs::path data = root_ / "out" / "data";
  const json m = json::parse(slurp(data / "manifest.json"));
  ASSERT_EQ(m["files"].size(), 2u);
  EXPECT_EQ(m["files"][0]["file"], "source.rlds");
  EXPECT_EQ(m["files"][1]["images"], 18);
  EXPECT_TRUE(fs::exists(data / "shifted.rlds"));
  // Regenerating gives the same bytes; a different data seed does not.
  const fs::path other = root_ / "regen";
  ASSERT_EQ(run({"gen-data", "--config", config_.string(), "--out", other.string()}), 0);
  EXPECT_EQ(slurp(other / "data" / "source.rlds"), slurp(data / "source.rlds"));
  EXPECT_EQ(slurp(other / "data" / "manifest.json"), slurp(data / "manifest.json"));
  ASSERT_EQ(run({"gen-data", "--config", config_.string(), "--out", other.string(),
                 "--seed-override", "99"}),
            0);
  EXPECT_NE(slurp(other / "data" / "source.rlds"), slurp(data / "source.rlds"));
  // Data from another seed no longer matches this config.
  EXPECT_EQ(run({"train", "--config", config_.string(), "--out", other.string()}), 2);
}

TEST_F(Pipeline, TamperedDataIsRejected) {
  const fs::path copy = root_ / "tamper";
  fs::remove_all(copy);
  fs::create_directories(copy);
  fs::copy(root_ / "out" / "data", copy / "data", fs::copy_options::recursive);
  fs::copy(root_ / "out" / "runs", copy / "runs", fs::copy_options::recursive);
  {
    std::fstream f(copy / "data" / "shifted.rlds", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  EXPECT_EQ(run({"eval", "--config", config_.string(), "--out", copy.string()}), 2);
}

TEST_F(Pipeline, TrainWritesCheckpointLogAndConfig) {
  for (int seed : {0, 1}) {
    const fs::path dir = run_root_ / ("seed-" + std::to_string(seed));
    const auto log = read_csv(dir / "train_log.csv");
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(log[0], (std::vector<std::string>{"epoch", "loss", "accuracy", "tau"}));
    EXPECT_EQ(log[1][0], "0");
    EXPECT_EQ(log[2][0], "1");
    const json cfg = json::parse(slurp(dir / "config.json"));
    EXPECT_EQ(cfg["seeds"], json::array({seed}));
    EXPECT_EQ(cli::parse_config(cfg).train_hash(), cli::parse_config(tiny_json()).train_hash());
    const auto model = vit::ViT::load(dir / "model.ckpt");
    EXPECT_EQ(model.config().register_mode, vit::RegisterMode::random);
  }
}

TEST_F(Pipeline, EvalRowsAndAggregateAgree) {
  std::map<std::string, std::vector<double>> means;  // mode -> per-seed means
  for (int seed : {0, 1}) {
    const auto rows = read_csv(run_root_ / ("seed-" + std::to_string(seed)) / "eval_episodes.csv");
    ASSERT_EQ(rows.size(), 1u + 2 * 5);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"domain", "mode", "episode", "accuracy"}));
    std::map<std::string, double> sum;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i][0], "shifted");
      sum[rows[i][1]] += std::stod(rows[i][3]);
    }
    for (auto& [mode, s] : sum) means[mode].push_back(s / 5.0);
  }
  const json agg = json::parse(slurp(run_root_ / "eval_aggregate.json"));
  ASSERT_EQ(agg["results"].size(), 2u);
  for (const auto& r : agg["results"]) {
    const auto& v = means.at(r["mode"].get<std::string>());
    const double mean = 0.5 * (v[0] + v[1]);
    EXPECT_NEAR(r["mean"].get<double>(), mean, 1e-12);
    EXPECT_NEAR(r["stderr"].get<double>(), std::abs(v[0] - v[1]) / 2.0, 1e-12);
  }
  const auto csv = read_csv(run_root_ / "eval_aggregate.csv");
  EXPECT_EQ(csv[0], (std::vector<std::string>{"method", "domain", "mode", "seeds", "mean", "stderr"}));
  EXPECT_EQ(csv.size(), 3u);
}

TEST_F(Pipeline, AnalysisOutputsAndManifest) {
  const fs::path dir = run_root_ / "seed-0" / "analysis";
  const auto sharp = read_csv(dir / "sharpness_long.csv");
  ASSERT_EQ(sharp.size(), 1u + 2 * 2);
  for (std::size_t i = 1; i < sharp.size(); ++i) {
    if (std::stod(sharp[i][2]) == 0.0) {
      EXPECT_EQ(std::stod(sharp[i][3]), 0.0);
    }
  }
  const json cka = json::parse(slurp(dir / "cka_source.json"));
  EXPECT_NEAR(cka["value"].get<double>(), 1.0, 1e-12);
  const json m = json::parse(slurp(dir / "manifest.json"));
  std::set<std::string> listed, present;
  for (const auto& f : m["files"]) listed.insert(f.get<std::string>());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != "manifest.json") present.insert(e.path().filename().string());
  EXPECT_EQ(listed, present);
  EXPECT_TRUE(listed.count("heatmap_shifted_0.csv"));
}

TEST_F(Pipeline, SeedOverrideRunsOneSeed) {
  const fs::path other = root_ / "override";
  fs::remove_all(other);
  ASSERT_EQ(run({"gen-data", "--config", config_.string(), "--out", other.string()}), 0);
  ASSERT_EQ(run({"train", "--config", config_.string(), "--out", other.string(),
                 "--seed-override", "7"}),
            0);
  std::vector<std::string> seeds;
  for (const auto& e : fs::directory_iterator(other / "runs" / run_root_.filename()))
    seeds.push_back(e.path().filename().string());
  EXPECT_EQ(seeds, (std::vector<std::string>{"seed-7"}));
}
