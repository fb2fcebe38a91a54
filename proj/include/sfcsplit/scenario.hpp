#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfcsplit/controller.hpp"
#include "sfcsplit/dataset.hpp"
#include "sfcsplit/network.hpp"
#include "sfcsplit/nn.hpp"
#include "sfcsplit/nsf.hpp"

namespace sfcsplit {

/// Model family: sub-model k maps boundary_dims[k-1] -> boundary_dims[k]
/// through layers_per_sub[k-1] dense layers whose hidden width is the larger
/// of the two boundary widths.
struct ModelSpec {
  std::vector<std::size_t> boundary_dims{384, 512, 256, 128, 10};
  std::vector<std::size_t> layers_per_sub{2, 2, 2, 2};
  std::string precision = "f32";
  std::uint64_t seed = 1;

  std::vector<std::size_t> layer_dims() const;
  std::vector<std::size_t> cuts() const;
  void validate() const;
};

struct DatasetSpec {
  BlobSpec blobs;
  std::string path;  // flat binary dataset; overrides blobs when set
};

struct CongestionSpec {
  bool enabled = false;
  std::string u = "v3";
  std::string v = "v4";
  double bw_mbps = 10.0;
  double at_s = 5.0;
  std::optional<double> restore_s = 35.0;
  double end_s = 45.0;  // rounds are issued back-to-back until this time
};

struct ControllerSpec {
  bool enabled = true;
  double interval_s = 1.0;
  double window_s = 10.0;
  double threshold_mbps = 10.0;
  std::vector<std::string> detour{"v6", "v9", "v10", "v7", "v5"};
  bool revert = false;
};

struct ScenarioConfig {
  std::string name = "scenario";
  net::TopologyConfig topology = net::ten_node_preset();
  ModelSpec model;
  ChainSpec chain;
  std::vector<std::size_t> batch_sizes{1, 8, 32, 128};
  std::size_t rounds = 50;
  std::size_t epochs = 200;
  std::optional<double> stop_accuracy;  // training stops once an epoch reaches it...
  std::size_t min_epochs = 1;           // ...but not before this many epochs
  nn::TrainConfig train;
  DatasetSpec dataset;
  net::ComputeModel compute;
  CongestionSpec congestion;
  ControllerSpec controller;
  std::string out_dir = "out";
  bool traffic_log = true;

  static ScenarioConfig from_json(const nlohmann::json& j);
  static ScenarioConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

ScenarioConfig inference_preset();
ScenarioConfig training_preset();
ScenarioConfig congestion_preset();
/// Switches the model to the full-size boundary widths and layer counts.
void use_full_dims(ScenarioConfig& cfg);

struct EpochStats {
  int epoch = 0;
  std::size_t rounds = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

std::vector<EpochStats> epoch_stats(const std::vector<RoundMetrics>& rounds);

struct RunOptions {
  std::string label = "run";
  std::optional<Chaining> chaining;
  std::optional<RunMode> mode;
  std::size_t batch = 0;  // 0: first configured batch size
  bool congestion = false;
  bool controller = false;
  std::optional<std::size_t> rounds;
  std::string traffic_path;  // JSON lines; empty disables
  bool keep_records = false;
};

struct RunResult {
  std::string label;
  Chaining chaining = Chaining::Sfc;
  RunMode mode = RunMode::Inference;
  std::size_t batch = 0;
  std::vector<RoundMetrics> rounds;
  std::vector<EpochStats> epochs;
  std::vector<ReconfigEvent> reconfigs;
  std::vector<std::string> stations;
  std::vector<std::size_t> executions;  // forward executions per chain position
  std::uint64_t traffic_digest = 0;
  std::uint64_t traffic_records = 0;
  std::vector<net::TrafficRecord> traffic;  // only with keep_records
  net::LinkCounters counters;
  std::vector<std::uint8_t> final_model;  // checkpoint bytes
  nlohmann::json flow_tables;
  std::vector<std::string> warnings;
  bool failed = false;
};

Dataset load_dataset(const ScenarioConfig& cfg);

/// Builds the network, the chain and (optionally) the controller, then runs
/// the scenario's rounds to completion.
RunResult run_chain(const ScenarioConfig& cfg, const RunOptions& opt);

/// Same data order and initial parameters as run_chain in training mode, but
/// a single process executes the unsplit model.
struct MonolithicResult {
  std::vector<EpochStats> epochs;
  std::vector<std::uint8_t> final_model;
};
MonolithicResult run_monolithic_training(const ScenarioConfig& cfg);

struct SweepRow {
  std::size_t batch = 0;
  SimTime forward_compute = 0;
  SimTime activation_tx = 0;
  SimTime result_tx = 0;
  SimTime total = 0;
  double transmission_share = 0.0;  // activation_tx / (forward_compute + activation_tx)
};

/// Mean over rounds 2..R (the first round is a warm-up and excluded).
SweepRow summarize_inference(const RunResult& r);

/// Traffic logs are written as <traffic_dir>/traffic_<label>.jsonl when traffic_dir is set.
std::vector<RunResult> run_inference_sweep(const ScenarioConfig& cfg, unsigned jobs = 1,
                                           const std::string& traffic_dir = "");
RunResult run_training(const ScenarioConfig& cfg, const std::string& traffic_dir = "");

struct CongestionReport {
  RunResult controlled;
  RunResult baseline;
  SimTime cap_onset = 0;
  std::optional<SimTime> restore;
  std::optional<SimTime> reconfigured_at;
  static constexpr std::size_t kSettleRounds = 5;
  SimTime pre_cap_latency = 0;      // median over rounds 2.. that end before the cap
  SimTime post_detour_latency = 0;  // worst round started on the detour after kSettleRounds
  SimTime baseline_capped_min = 0;  // best baseline round run entirely under the cap
};
CongestionReport run_congestion_scenario(const ScenarioConfig& cfg, const std::string& traffic_dir = "");

struct ModeReport {
  Chaining chaining = Chaining::Sfc;
  RunResult run;
  SimTime mean_latency = 0;
  std::vector<std::string> forward_path;
  std::vector<std::string> return_path;
  double srh_bytes_per_round = 0.0;
  bool bypass = false;
};
struct CompareReport {
  std::vector<ModeReport> modes;
  bool outputs_match = false;  // sfc vs traditional
  bool overhead_is_srh_only = false;
  std::vector<std::string> problems;
};
CompareReport compare_chaining_modes(const ScenarioConfig& cfg, const std::string& traffic_dir = "");

// ---- output ----
std::string rounds_csv_header();
void write_rounds_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs);
void write_nodes_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs);
void write_legs_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs);
nlohmann::json run_summary(const RunResult& r);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace sfcsplit
