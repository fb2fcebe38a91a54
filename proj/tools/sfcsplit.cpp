#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "sfcsplit/checkpoint.hpp"
#include "sfcsplit/errors.hpp"
#include "sfcsplit/scenario.hpp"

namespace fs = std::filesystem;
using namespace sfcsplit;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitAssertion = 4;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::string chaining;
  bool paper_dims = false;
  unsigned jobs = 1;
};

ScenarioConfig resolve(const Options& o, ScenarioConfig fallback) {
  ScenarioConfig cfg = o.config.empty() ? std::move(fallback) : ScenarioConfig::load(o.config);
  if (o.paper_dims) use_full_dims(cfg);
  if (o.seed) cfg.model.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.mode.empty()) cfg.chain.mode = parse_run_mode(o.mode);
  if (!o.chaining.empty()) cfg.chain.chaining = parse_chaining(o.chaining);
  cfg.validate();
  return cfg;
}

ScenarioConfig resolve_for_output(const Options& o, ScenarioConfig fallback) {
  auto cfg = resolve(o, std::move(fallback));
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string traffic_dir(const ScenarioConfig& cfg) { return cfg.traffic_log ? cfg.out_dir : std::string(); }

void write_tables(const ScenarioConfig& cfg, const std::vector<RunResult>& runs) {
  const fs::path dir = cfg.out_dir;
  write_rounds_csv(dir / "rounds.csv", runs);
  write_nodes_csv(dir / "nodes.csv", runs);
  write_legs_csv(dir / "legs.csv", runs);
}

double ms(SimTime t) { return static_cast<double>(t) / 1e6; }

int cmd_run(const Options& o) {
  ScenarioConfig cfg = resolve_for_output(o, o.mode == "training" ? training_preset() : inference_preset());
  RunResult r;
  if (cfg.chain.mode == RunMode::Training) {
    r = run_training(cfg, traffic_dir(cfg));
    if (cfg.model.precision == "f64") {
      save_checkpoint(decode_checkpoint<double>(r.final_model), fs::path(cfg.out_dir) / "model.nsfm");
    } else {
      save_checkpoint(decode_checkpoint<float>(r.final_model), fs::path(cfg.out_dir) / "model.nsfm");
    }
  } else {
    RunOptions opt;
    opt.label = "run";
    opt.traffic_path = cfg.traffic_log ? (fs::path(cfg.out_dir) / "traffic_run.jsonl").string() : "";
    r = run_chain(cfg, opt);
  }
  write_tables(cfg, {r});
  json summary{{"scenario", cfg.name}, {"config", cfg.to_json()}, {"run", run_summary(r)}};
  write_json(fs::path(cfg.out_dir) / "summary.json", summary);
  std::printf("%s: %zu rounds (%s, %s)", cfg.name.c_str(), r.rounds.size(), to_string(r.mode).c_str(),
              to_string(r.chaining).c_str());
  if (!r.epochs.empty()) {
    std::printf(", final epoch %d loss %.4f accuracy %.4f", r.epochs.back().epoch, r.epochs.back().mean_loss,
                r.epochs.back().accuracy);
  }
  std::printf("\n");
  return r.failed ? 1 : 0;
}

int cmd_sweep(const Options& o) {
  ScenarioConfig cfg = resolve_for_output(o, inference_preset());
  const auto runs = run_inference_sweep(cfg, o.jobs, traffic_dir(cfg));
  write_tables(cfg, runs);
  const fs::path agg = fs::path(cfg.out_dir) / "sweep.csv";
  {
    std::ofstream out(agg, std::ios::binary);
    out << "batch,fwd_compute_ns,act_tx_ns,result_tx_ns,total_ns,transmission_share\n";
    for (const auto& r : runs) {
      const auto row = summarize_inference(r);
      char share[32];
      std::snprintf(share, sizeof share, "%.6f", row.transmission_share);
      out << row.batch << ',' << row.forward_compute << ',' << row.activation_tx << ',' << row.result_tx << ','
          << row.total << ',' << share << "\n";
      std::printf("b=%-4zu compute %.3f ms  activation tx %.3f ms  share %.3f\n", row.batch, ms(row.forward_compute),
                  ms(row.activation_tx), row.transmission_share);
    }
  }
  json summary{{"scenario", cfg.name}, {"config", cfg.to_json()}, {"runs", json::array()}};
  for (const auto& r : runs) summary["runs"].push_back(run_summary(r));
  write_json(fs::path(cfg.out_dir) / "summary.json", summary);
  return 0;
}

int cmd_congestion(const Options& o) {
  ScenarioConfig cfg = resolve_for_output(o, congestion_preset());
  const auto rep = run_congestion_scenario(cfg, traffic_dir(cfg));
  write_tables(cfg, {rep.controlled, rep.baseline});
  json summary{{"scenario", cfg.name},
               {"config", cfg.to_json()},
               {"cap_onset_ns", rep.cap_onset},
               {"restore_ns", rep.restore ? json(*rep.restore) : json(nullptr)},
               {"reconfigured_ns", rep.reconfigured_at ? json(*rep.reconfigured_at) : json(nullptr)},
               {"pre_cap_latency_ns", rep.pre_cap_latency},
               {"post_detour_latency_ns", rep.post_detour_latency},
               {"baseline_capped_min_ns", rep.baseline_capped_min},
               {"runs", {run_summary(rep.controlled), run_summary(rep.baseline)}}};
  write_json(fs::path(cfg.out_dir) / "summary.json", summary);
  std::printf("pre-cap %.3f ms, post-detour worst %.3f ms, baseline under cap >= %.3f ms", ms(rep.pre_cap_latency),
              ms(rep.post_detour_latency), ms(rep.baseline_capped_min));
  if (rep.reconfigured_at) {
    std::printf(", reconfigured %.3f s after cap onset", to_seconds(*rep.reconfigured_at - rep.cap_onset));
  }
  std::printf("\n");
  return 0;
}

int cmd_compare(const Options& o) {
  ScenarioConfig fallback = inference_preset();
  fallback.rounds = 10;
  fallback.batch_sizes = {8};
  ScenarioConfig cfg = resolve_for_output(o, fallback);
  const auto rep = compare_chaining_modes(cfg, traffic_dir(cfg));
  std::vector<RunResult> runs;
  json modes = json::array();
  for (const auto& m : rep.modes) {
    runs.push_back(m.run);
    modes.push_back({{"chaining", to_string(m.chaining)},
                     {"mean_latency_ns", m.mean_latency},
                     {"forward_path", m.forward_path},
                     {"return_path", m.return_path},
                     {"srh_bytes_per_round", m.srh_bytes_per_round},
                     {"bypass", m.bypass},
                     {"run", run_summary(m.run)}});
    std::printf("%-20s latency %.3f ms  path %s%s\n", to_string(m.chaining).c_str(), ms(m.mean_latency),
                join_path(m.forward_path).c_str(), m.bypass ? "  [BYPASS: intermediate NSFs skipped]" : "");
  }
  write_tables(cfg, runs);
  write_json(fs::path(cfg.out_dir) / "summary.json", {{"scenario", cfg.name},
                                                      {"config", cfg.to_json()},
                                                      {"modes", modes},
                                                      {"outputs_match", rep.outputs_match},
                                                      {"overhead_is_srh_only", rep.overhead_is_srh_only},
                                                      {"problems", rep.problems}});
  for (const auto& p : rep.problems) std::fprintf(stderr, "assertion failed: %s\n", p.c_str());
  return rep.problems.empty() ? 0 : kExitAssertion;
}

int cmd_dump_flows(const Options& o) {
  ScenarioConfig fallback = inference_preset();
  fallback.batch_sizes = {1};
  ScenarioConfig cfg = resolve(o, fallback);
  RunOptions opt;
  opt.label = "dump";
  opt.rounds = 1;
  const auto r = run_chain(cfg, opt);
  std::cout << r.flow_tables.dump(2) << "\n";
  return 0;
}

int cmd_validate(const Options& o) {
  if (o.config.empty()) throw ConfigError("validate-config needs --config");
  ScenarioConfig cfg = resolve(o, {});
  std::printf("%s: ok (%zu nodes, %zu links, %zu layers in %zu sub-models)\n", cfg.name.c_str(),
              cfg.topology.nodes.size(), cfg.topology.links.size(), cfg.model.layer_dims().size() - 1,
              cfg.model.layers_per_sub.size());
  return 0;
}

int classify(std::exception_ptr e) {
  try {
    std::rethrow_exception(e);
  } catch (const SimulationError& s) {
    if (s.cause) return classify(s.cause);
    std::fprintf(stderr, "error: %s\n", s.what());
    return 1;
  } catch (const ConfigError& c) {
    std::fprintf(stderr, "config error: %s\n", c.what());
    return kExitConfig;
  } catch (const net::TopologyError& t) {
    std::fprintf(stderr, "config error: %s\n", t.what());
    return kExitConfig;
  } catch (const DivergenceError& d) {
    std::fprintf(stderr, "divergence: %s\n", d.what());
    return kExitDivergence;
  } catch (const std::exception& x) {
    std::fprintf(stderr, "error: %s\n", x.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split inference/learning over source-routed service chains (network emulation)"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "Scenario JSON file");
    sub->add_option("--seed", o.seed, "Override the model seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--mode", o.mode, "inference | training")->check(CLI::IsMember({"inference", "training"}));
    sub->add_option("--chaining", o.chaining, "sfc | traditional | transparent-no-srv6")
        ->check(CLI::IsMember({"sfc", "traditional", "transparent-no-srv6"}));
    sub->add_flag("--paper-dims", o.paper_dims, "Use the full-size model widths and layer counts");
  };
  auto* run = app.add_subcommand("run", "Run one inference or training scenario");
  auto* sweep = app.add_subcommand("sweep", "Inference latency over the configured batch sizes");
  sweep->add_option("--jobs", o.jobs, "Parallel worker threads")->check(CLI::PositiveNumber);
  auto* congestion = app.add_subcommand("congestion", "Link cap with and without the rerouting controller");
  auto* compare = app.add_subcommand("compare-modes", "Compare sfc, traditional and transparent-no-srv6 chaining");
  auto* dump = app.add_subcommand("dump-flows", "Run one round and print every flow table as JSON");
  auto* validate = app.add_subcommand("validate-config", "Check a scenario file");
  for (auto* s : {run, sweep, congestion, compare, dump, validate}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  try {
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    if (*congestion) return cmd_congestion(o);
    if (*compare) return cmd_compare(o);
    if (*dump) return cmd_dump_flows(o);
    if (*validate) return cmd_validate(o);
  } catch (...) {
    return classify(std::current_exception());
  }
  return 0;
}
