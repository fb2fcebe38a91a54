#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "scenario_helpers.hpp"
#include "sfcsplit/errors.hpp"
#include "sfcsplit/scenario.hpp"

using namespace sfcsplit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sfcsplit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(SFCSPLIT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto path = dir / "cfg.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(ModelSpec, PaperDimsGiveExpectedSplit) {
  ScenarioConfig cfg;
  use_full_dims(cfg);
  EXPECT_EQ(cfg.model.layer_dims().size(), 38u);
  EXPECT_EQ(cfg.model.cuts(), (std::vector<std::size_t>{2, 10, 19}));
  EXPECT_EQ(nn::split_sizes(37, cfg.model.cuts()), (std::vector<std::size_t>{2, 8, 9, 18}));
}

TEST(ModelSpec, HiddenWidthIsLargerBoundary) {
  ModelSpec m;
  m.boundary_dims = {4, 6, 3};
  m.layers_per_sub = {2, 3};
  EXPECT_EQ(m.layer_dims(), (std::vector<std::size_t>{4, 6, 6, 6, 6, 3}));
  EXPECT_EQ(m.cuts(), (std::vector<std::size_t>{2}));
}

TEST(Config, JsonRoundTrip) {
  const auto cfg = congestion_preset();
  const auto back = ScenarioConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
}

TEST(Config, PartialJsonKeepsDefaults) {
  const auto cfg = ScenarioConfig::from_json(json{{"name", "x"}, {"rounds", 7}, {"chaining", "traditional"}});
  EXPECT_EQ(cfg.rounds, 7u);
  EXPECT_EQ(cfg.chain.chaining, Chaining::Traditional);
  EXPECT_EQ(cfg.batch_sizes, (std::vector<std::size_t>{1, 8, 32, 128}));
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(ScenarioConfig::from_json(json{{"roundz", 3}}), ConfigError);
  EXPECT_THROW(ScenarioConfig::from_json(json{{"model", {{"dims", {1, 2}}}}}), ConfigError);
  EXPECT_THROW(ScenarioConfig::from_json(json{{"mode", "bogus"}}), ConfigError);
  EXPECT_THROW(ScenarioConfig::from_json(json{{"topology", "fig7"}}), ConfigError);
  EXPECT_THROW(ScenarioConfig::from_json(json{{"rounds", "many"}}), ConfigError);
}

TEST(Config, ValidationCatchesInconsistencies) {
  auto cfg = inference_preset();
  cfg.chain.nsfs = {"v6"};
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = inference_preset();
  cfg.chain.traversal = {"v6", "v77", "v5"};
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = inference_preset();
  cfg.dataset.blobs.dim = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = inference_preset();
  cfg.batch_sizes = {0};
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = inference_preset();
  cfg.model.layers_per_sub = {2, 0, 2, 2};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(EpochStats, WeightedBySamples) {
  std::vector<RoundMetrics> rounds(3);
  rounds[0].epoch = 1;
  rounds[0].batch = 4;
  rounds[0].loss = 1.0;
  rounds[0].correct = 1;
  rounds[1].epoch = 1;
  rounds[1].batch = 2;
  rounds[1].loss = 4.0;
  rounds[1].correct = 2;
  rounds[2].epoch = 2;
  rounds[2].batch = 4;
  rounds[2].loss = 0.5;
  rounds[2].correct = 4;
  const auto s = epoch_stats(rounds);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s[0].mean_loss, 2.0);
  EXPECT_DOUBLE_EQ(s[0].accuracy, 0.5);
  EXPECT_DOUBLE_EQ(s[1].accuracy, 1.0);
}

TEST(Sweep, TransmissionGrowsWithBatchWhileComputeStaysFlat) {
  auto cfg = inference_preset();
  cfg.rounds = 4;
  cfg.traffic_log = false;
  const auto runs = run_inference_sweep(cfg, 2);
  ASSERT_EQ(runs.size(), 4u);
  std::vector<SweepRow> rows;
  for (const auto& r : runs) rows.push_back(summarize_inference(r));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GT(rows[i].activation_tx, rows[i - 1].activation_tx);
    EXPECT_LE(std::abs(static_cast<double>(rows[i].forward_compute - rows[0].forward_compute)),
              0.2 * static_cast<double>(rows[0].forward_compute));
  }
  EXPECT_LT(rows.front().transmission_share, 0.5);
  EXPECT_GT(rows.back().transmission_share, 0.5);
}

TEST(Sweep, ParallelJobsMatchSerial) {
  auto cfg = testcfg::small_inference(3);
  cfg.batch_sizes = {1, 4, 16};
  const auto serial = run_inference_sweep(cfg, 1);
  const auto parallel = run_inference_sweep(cfg, 3);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].traffic_digest, parallel[i].traffic_digest);
  }
}

TEST(Output, RoundsCsvIsStableAndReproducible) {
  const auto dir = scratch("csv");
  const auto cfg = testcfg::small_training();
  RunOptions opt;
  const auto a = run_chain(cfg, opt);
  const auto b = run_chain(cfg, opt);
  write_rounds_csv(dir / "a.csv", {a});
  write_rounds_csv(dir / "b.csv", {b});
  const auto text = slurp(dir / "a.csv");
  EXPECT_EQ(text, slurp(dir / "b.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), rounds_csv_header());
  EXPECT_NE(rounds_csv_header().find("total_ns"), std::string::npos);
  EXPECT_NE(rounds_csv_header().find("forward_path"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Output, TrafficLogIsJsonLines) {
  const auto dir = scratch("traffic");
  RunOptions opt;
  opt.traffic_path = (dir / "t.jsonl").string();
  const auto r = run_chain(testcfg::small_inference(1), opt);
  std::ifstream in(dir / "t.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    EXPECT_TRUE(j.contains("node"));
    EXPECT_TRUE(j.contains("sid"));
    ++n;
  }
  EXPECT_EQ(n, r.traffic_records);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  EXPECT_EQ(cli("validate-config --config " + write_config(dir, inference_preset().to_json()).string()), 0);
  EXPECT_EQ(cli("validate-config --config " + write_config(dir, json{{"roundz", 1}}).string()), 2);
  EXPECT_EQ(cli("validate-config --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(cli("run --chaining nonsense"), 2);
  EXPECT_EQ(cli("frobnicate"), 2);

  auto diverge = testcfg::small_training(1);
  diverge.train.learning_rate = 1e6;
  diverge.out_dir = (dir / "div").string();
  EXPECT_EQ(cli("run --config " + write_config(dir, diverge.to_json()).string()), 3);

  auto small = testcfg::small_inference(3);
  small.out_dir = (dir / "cmp").string();
  EXPECT_EQ(cli("compare-modes --config " + write_config(dir, small.to_json()).string()), 0);
  EXPECT_TRUE(fs::exists(dir / "cmp" / "summary.json"));
  fs::remove_all(dir);
}

TEST(Cli, RunIsByteReproducible) {
  const auto dir = scratch("repro");
  auto cfg = testcfg::small_training();
  cfg.traffic_log = true;
  cfg.out_dir = (dir / "out").string();
  const auto path = write_config(dir, cfg.to_json());
  ASSERT_EQ(cli("run --config " + path.string()), 0);
  fs::rename(dir / "out", dir / "first");
  ASSERT_EQ(cli("run --config " + path.string()), 0);
  for (const char* f : {"rounds.csv", "nodes.csv", "legs.csv", "summary.json", "traffic_train.jsonl", "model.nsfm"}) {
    EXPECT_EQ(slurp(dir / "first" / f), slurp(dir / "out" / f)) << f;
    EXPECT_FALSE(slurp(dir / "out" / f).empty()) << f;
  }
  fs::remove_all(dir);
}
