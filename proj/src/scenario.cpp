#include "sfcsplit/scenario.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <thread>

#include "sfcsplit/checkpoint.hpp"
#include "sfcsplit/errors.hpp"

namespace sfcsplit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// model

std::vector<std::size_t> ModelSpec::layer_dims() const {
  std::vector<std::size_t> dims{boundary_dims.front()};
  for (std::size_t k = 0; k < layers_per_sub.size(); ++k) {
    const std::size_t in = boundary_dims[k], out = boundary_dims[k + 1];
    const std::size_t hidden = std::max(in, out);
    for (std::size_t l = 0; l + 1 < layers_per_sub[k]; ++l) dims.push_back(hidden);
    dims.push_back(out);
  }
  return dims;
}

std::vector<std::size_t> ModelSpec::cuts() const {
  std::vector<std::size_t> cuts;
  std::size_t acc = 0;
  for (std::size_t k = 0; k + 1 < layers_per_sub.size(); ++k) {
    acc += layers_per_sub[k];
    cuts.push_back(acc);
  }
  return cuts;
}

void ModelSpec::validate() const {
  if (layers_per_sub.size() < 2) throw ConfigError("model needs at least two sub-models");
  if (boundary_dims.size() != layers_per_sub.size() + 1) {
    throw ConfigError("model.boundary_dims must have one more entry than model.layers_per_sub");
  }
  for (auto d : boundary_dims) {
    if (d == 0) throw ConfigError("model dims must be positive");
  }
  for (auto l : layers_per_sub) {
    if (l == 0) throw ConfigError("every sub-model needs at least one layer");
  }
  if (precision != "f32" && precision != "f64") throw ConfigError("model.precision must be f32 or f64");
}

// ---------------------------------------------------------------------------
// config

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [k, _] : j.items()) {
    if (!ok.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

ScenarioConfig ScenarioConfig::from_json(const json& j) {
  ScenarioConfig c;
  try {
    reject_unknown(j,
                   {"name", "topology", "model", "mode", "chaining", "chain", "batch_sizes", "rounds", "epochs",
                    "stop_accuracy", "min_epochs", "train", "dataset", "compute", "congestion", "controller",
                    "output"},
                   "scenario");
    read(j, "name", c.name);
    if (j.contains("topology")) {
      const auto& t = j.at("topology");
      if (t.is_string()) {
        if (t.get<std::string>() != "ten-node") throw ConfigError("unknown topology preset " + t.dump());
      } else {
        c.topology = net::TopologyConfig::from_json(t);
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, {"boundary_dims", "layers_per_sub", "precision", "seed"}, "model");
      read(m, "boundary_dims", c.model.boundary_dims);
      read(m, "layers_per_sub", c.model.layers_per_sub);
      read(m, "precision", c.model.precision);
      read(m, "seed", c.model.seed);
    }
    if (j.contains("mode")) c.chain.mode = parse_run_mode(j.at("mode").get<std::string>());
    if (j.contains("chaining")) c.chain.chaining = parse_chaining(j.at("chaining").get<std::string>());
    if (j.contains("chain")) {
      const auto& ch = j.at("chain");
      reject_unknown(ch,
                     {"client", "server", "sr_source", "sr_endpoint", "nsfs", "traversal", "service_port",
                      "proxy_port", "round_timeout_s"},
                     "chain");
      read(ch, "client", c.chain.client);
      read(ch, "server", c.chain.server);
      read(ch, "sr_source", c.chain.sr_source);
      read(ch, "sr_endpoint", c.chain.sr_endpoint);
      read(ch, "nsfs", c.chain.nsfs);
      read(ch, "traversal", c.chain.traversal);
      read(ch, "service_port", c.chain.service_port);
      read(ch, "proxy_port", c.chain.proxy_port);
      if (ch.contains("round_timeout_s")) c.chain.round_timeout = seconds(ch.at("round_timeout_s").get<double>());
    }
    read(j, "batch_sizes", c.batch_sizes);
    read(j, "rounds", c.rounds);
    read(j, "epochs", c.epochs);
    if (j.contains("stop_accuracy") && !j.at("stop_accuracy").is_null()) {
      c.stop_accuracy = j.at("stop_accuracy").get<double>();
    }
    read(j, "min_epochs", c.min_epochs);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, {"learning_rate", "momentum", "weight_decay", "schedule"}, "train");
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "momentum", c.train.momentum);
      read(t, "weight_decay", c.train.weight_decay);
      if (t.contains("schedule")) {
        c.train.schedule.clear();
        for (const auto& e : t.at("schedule")) c.train.schedule.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
      }
    }
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      reject_unknown(d, {"samples", "dim", "classes", "center_scale", "noise", "seed", "path"}, "dataset");
      read(d, "samples", c.dataset.blobs.samples);
      read(d, "dim", c.dataset.blobs.dim);
      read(d, "classes", c.dataset.blobs.classes);
      read(d, "center_scale", c.dataset.blobs.center_scale);
      read(d, "noise", c.dataset.blobs.noise);
      read(d, "seed", c.dataset.blobs.seed);
      read(d, "path", c.dataset.path);
    }
    if (j.contains("compute")) {
      const auto& cm = j.at("compute");
      reject_unknown(cm, {"base_flops", "floor_us"}, "compute");
      read(cm, "base_flops", c.compute.base_flops_per_s);
      if (cm.contains("floor_us")) {
        c.compute.floor = static_cast<SimTime>(std::llround(cm.at("floor_us").get<double>() * 1e3));
      }
    }
    if (j.contains("congestion")) {
      const auto& g = j.at("congestion");
      reject_unknown(g, {"enabled", "link", "bw_mbps", "at_s", "restore_s", "end_s"}, "congestion");
      read(g, "enabled", c.congestion.enabled);
      if (g.contains("link")) {
        const auto link = g.at("link").get<std::vector<std::string>>();
        if (link.size() != 2) throw ConfigError("congestion.link must name two nodes");
        c.congestion.u = link[0];
        c.congestion.v = link[1];
      }
      read(g, "bw_mbps", c.congestion.bw_mbps);
      read(g, "at_s", c.congestion.at_s);
      if (g.contains("restore_s")) {
        c.congestion.restore_s =
            g.at("restore_s").is_null() ? std::nullopt : std::optional<double>(g.at("restore_s").get<double>());
      }
      read(g, "end_s", c.congestion.end_s);
    }
    if (j.contains("controller")) {
      const auto& k = j.at("controller");
      reject_unknown(k, {"enabled", "interval_s", "window_s", "threshold_mbps", "detour", "revert"}, "controller");
      read(k, "enabled", c.controller.enabled);
      read(k, "interval_s", c.controller.interval_s);
      read(k, "window_s", c.controller.window_s);
      read(k, "threshold_mbps", c.controller.threshold_mbps);
      read(k, "detour", c.controller.detour);
      read(k, "revert", c.controller.revert);
    }
    if (j.contains("output")) {
      const auto& o = j.at("output");
      reject_unknown(o, {"dir", "traffic_log"}, "output");
      read(o, "dir", c.out_dir);
      read(o, "traffic_log", c.traffic_log);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid scenario config: ") + e.what());
  } catch (const net::TopologyError& e) {
    throw ConfigError(std::string("invalid topology: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid scenario config: ") + e.what());
  }
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

json ScenarioConfig::to_json() const {
  json schedule = json::array();
  for (const auto& [e, d] : train.schedule) schedule.push_back({e, d});
  json j{
      {"name", name},
      {"topology", topology.to_json()},
      {"model",
       {{"boundary_dims", model.boundary_dims},
        {"layers_per_sub", model.layers_per_sub},
        {"precision", model.precision},
        {"seed", model.seed}}},
      {"mode", to_string(chain.mode)},
      {"chaining", to_string(chain.chaining)},
      {"chain",
       {{"client", chain.client},
        {"server", chain.server},
        {"sr_source", chain.sr_source},
        {"sr_endpoint", chain.sr_endpoint},
        {"nsfs", chain.nsfs},
        {"traversal", chain.traversal},
        {"service_port", chain.service_port},
        {"proxy_port", chain.proxy_port},
        {"round_timeout_s", to_seconds(chain.round_timeout)}}},
      {"batch_sizes", batch_sizes},
      {"rounds", rounds},
      {"epochs", epochs},
      {"stop_accuracy", stop_accuracy ? json(*stop_accuracy) : json(nullptr)},
      {"min_epochs", min_epochs},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"momentum", train.momentum},
        {"weight_decay", train.weight_decay},
        {"schedule", schedule}}},
      {"dataset",
       {{"samples", dataset.blobs.samples},
        {"dim", dataset.blobs.dim},
        {"classes", dataset.blobs.classes},
        {"center_scale", dataset.blobs.center_scale},
        {"noise", dataset.blobs.noise},
        {"seed", dataset.blobs.seed},
        {"path", dataset.path}}},
      {"compute",
       {{"base_flops", compute.base_flops_per_s}, {"floor_us", static_cast<double>(compute.floor) / 1e3}}},
      {"congestion",
       {{"enabled", congestion.enabled},
        {"link", {congestion.u, congestion.v}},
        {"bw_mbps", congestion.bw_mbps},
        {"at_s", congestion.at_s},
        {"restore_s", congestion.restore_s ? json(*congestion.restore_s) : json(nullptr)},
        {"end_s", congestion.end_s}}},
      {"controller",
       {{"enabled", controller.enabled},
        {"interval_s", controller.interval_s},
        {"window_s", controller.window_s},
        {"threshold_mbps", controller.threshold_mbps},
        {"detour", controller.detour},
        {"revert", controller.revert}}},
      {"output", {{"dir", out_dir}, {"traffic_log", traffic_log}}},
  };
  return j;
}

void ScenarioConfig::validate() const {
  model.validate();
  const std::size_t k = model.layers_per_sub.size();
  if (chain.nsfs.size() + 2 != k) {
    throw ConfigError("chain has " + std::to_string(chain.nsfs.size()) + " NSFs but the model has " +
                      std::to_string(k) + " sub-models (expected NSFs = K - 2)");
  }
  if (batch_sizes.empty()) throw ConfigError("batch_sizes must not be empty");
  for (auto b : batch_sizes) {
    if (b == 0) throw ConfigError("batch sizes must be positive");
  }
  if (rounds == 0) throw ConfigError("rounds must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (chain.round_timeout <= 0) throw ConfigError("round timeout must be positive");
  if (dataset.path.empty()) {
    if (dataset.blobs.dim != model.boundary_dims.front()) {
      throw ConfigError("dataset.dim must equal the model input width");
    }
    if (dataset.blobs.classes != model.boundary_dims.back()) {
      throw ConfigError("dataset.classes must equal the model output width");
    }
    if (dataset.blobs.samples == 0) throw ConfigError("dataset.samples must be positive");
  }
  std::set<std::string> names;
  for (const auto& n : topology.nodes) names.insert(n.id);
  auto need = [&](const std::string& n, const char* what) {
    if (!names.contains(n)) throw ConfigError(std::string(what) + " '" + n + "' is not a topology node");
  };
  need(chain.client, "client");
  need(chain.server, "server");
  need(chain.sr_source, "sr_source");
  need(chain.sr_endpoint, "sr_endpoint");
  for (const auto& n : chain.nsfs) need(n, "nsf");
  for (const auto& n : chain.traversal) need(n, "traversal node");
  for (const auto& n : controller.detour) need(n, "detour node");
  need(congestion.u, "congestion link end");
  need(congestion.v, "congestion link end");
  if (chain.traversal.empty()) throw ConfigError("chain.traversal must not be empty");
  if (controller.interval_s <= 0 || controller.window_s < controller.interval_s) {
    throw ConfigError("controller needs 0 < interval_s <= window_s");
  }
  if (!(controller.threshold_mbps > 0)) throw ConfigError("controller.threshold_mbps must be positive");
  if (!(congestion.bw_mbps > 0)) throw ConfigError("congestion.bw_mbps must be positive");
  if (congestion.end_s <= 0) throw ConfigError("congestion.end_s must be positive");
  if (congestion.restore_s && *congestion.restore_s <= congestion.at_s) {
    throw ConfigError("congestion.restore_s must follow at_s");
  }
  try {
    net::Network probe(topology);
    (void)probe.link_index(congestion.u, congestion.v);
  } catch (const net::TopologyError& e) {
    throw ConfigError(std::string("invalid topology: ") + e.what());
  }
}

ScenarioConfig inference_preset() {
  ScenarioConfig c;
  c.name = "inference-sweep";
  c.chain.mode = RunMode::Inference;
  c.batch_sizes = {1, 8, 32, 128};
  c.rounds = 50;
  c.dataset.blobs.samples = 512;
  return c;
}

ScenarioConfig training_preset() {
  ScenarioConfig c;
  c.name = "toy-training";
  c.chain.mode = RunMode::Training;
  c.model.boundary_dims = {32, 64, 64, 64, 10};
  c.model.layers_per_sub = {4, 4, 4, 4};
  c.model.seed = 11;
  c.dataset.blobs = BlobSpec{2000, 32, 10, 1.0, 1.0, 7};
  c.batch_sizes = {128};
  c.epochs = 200;
  c.stop_accuracy = 0.95;
  c.min_epochs = 20;
  c.train.learning_rate = 0.005;
  return c;
}

ScenarioConfig congestion_preset() {
  ScenarioConfig c;
  c.name = "congestion";
  c.chain.mode = RunMode::Training;
  c.model.boundary_dims = {32, 32, 32, 32, 10};
  c.model.layers_per_sub = {1, 1, 1, 1};
  c.model.seed = 5;
  c.dataset.blobs = BlobSpec{1024, 32, 10, 1.0, 1.0, 7};
  c.batch_sizes = {128};
  c.train.learning_rate = 0.01;
  c.congestion.enabled = true;
  c.controller.enabled = true;
  return c;
}

void use_full_dims(ScenarioConfig& cfg) {
  cfg.model.boundary_dims = {3072, 4096, 2048, 1024, 100};
  cfg.model.layers_per_sub = {2, 8, 9, 18};
  cfg.dataset.blobs.dim = 3072;
  cfg.dataset.blobs.classes = 100;
}

// ---------------------------------------------------------------------------
// runs

std::vector<EpochStats> epoch_stats(const std::vector<RoundMetrics>& rounds) {
  std::vector<EpochStats> out;
  std::vector<double> loss_sum;
  std::vector<std::size_t> samples, correct;
  for (const auto& r : rounds) {
    if (!r.loss) continue;
    if (out.empty() || out.back().epoch != static_cast<int>(r.epoch)) {
      out.push_back({static_cast<int>(r.epoch), 0, 0.0, 0.0});
      loss_sum.push_back(0.0);
      samples.push_back(0);
      correct.push_back(0);
    }
    out.back().rounds += 1;
    loss_sum.back() += *r.loss * static_cast<double>(r.batch);
    samples.back() += r.batch;
    correct.back() += r.correct;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].mean_loss = loss_sum[i] / static_cast<double>(samples[i]);
    out[i].accuracy = static_cast<double>(correct[i]) / static_cast<double>(samples[i]);
  }
  return out;
}

Dataset load_dataset(const ScenarioConfig& cfg) {
  if (!cfg.dataset.path.empty()) {
    Dataset ds = load_flat_dataset(cfg.dataset.path);
    if (ds.dim != cfg.model.boundary_dims.front() || ds.classes != cfg.model.boundary_dims.back()) {
      throw ConfigError("dataset " + cfg.dataset.path + " does not match the model input/output widths");
    }
    return ds;
  }
  return make_gaussian_blobs(cfg.dataset.blobs);
}

namespace {

/// Epoch/batch iterator shared by networked and monolithic training.
class TrainingOrder {
 public:
  TrainingOrder(const ScenarioConfig& cfg, std::size_t n, std::size_t batch, bool endless)
      : cfg_(cfg), n_(n), batch_(batch), endless_(endless) {}

  /// Next (epoch, indices), or nullopt when training is over. `done` holds
  /// statistics of every completed epoch so far.
  std::optional<std::pair<int, std::vector<std::size_t>>> next(const std::vector<EpochStats>& done) {
    if (pos_ == batches_.size()) {
      if (epoch_ > 0 && !endless_) {
        if (static_cast<std::size_t>(epoch_) >= cfg_.epochs) return std::nullopt;
        if (cfg_.stop_accuracy && static_cast<std::size_t>(epoch_) >= cfg_.min_epochs && !done.empty() &&
            done.back().epoch == epoch_ && done.back().accuracy >= *cfg_.stop_accuracy) {
          return std::nullopt;
        }
      }
      ++epoch_;
      batches_ = epoch_batches(n_, batch_, cfg_.model.seed, epoch_);
      pos_ = 0;
    }
    return std::make_pair(epoch_, batches_[pos_++]);
  }

 private:
  const ScenarioConfig& cfg_;
  std::size_t n_;
  std::size_t batch_;
  bool endless_;
  int epoch_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t pos_ = 0;
};

template <typename T>
RunResult run_chain_t(const ScenarioConfig& cfg, const RunOptions& opt) {
  net::Network net(cfg.topology, cfg.compute);
  net.traffic_log().keep_records(opt.keep_records);
  if (!opt.traffic_path.empty()) net.traffic_log().stream_to(opt.traffic_path);

  ChainSpec chain = cfg.chain;
  if (opt.mode) chain.mode = *opt.mode;
  if (opt.chaining) chain.chaining = *opt.chaining;
  const std::size_t batch = opt.batch ? opt.batch : cfg.batch_sizes.front();
  const std::size_t rounds = opt.rounds.value_or(cfg.rounds);

  const auto global = nn::GlobalModel<T>::init(cfg.model.layer_dims(), cfg.model.seed);
  nn::TrainConfig train = cfg.train;
  train.batch_size = batch;
  const Dataset ds = load_dataset(cfg);

  const bool timed = opt.congestion && cfg.congestion.enabled;
  if (timed) {
    net.set_link_bandwidth(net.link_index(cfg.congestion.u, cfg.congestion.v),
                           static_cast<std::uint64_t>(std::llround(cfg.congestion.bw_mbps * 1e6)),
                           seconds(cfg.congestion.at_s),
                           cfg.congestion.restore_s ? std::optional<SimTime>(seconds(*cfg.congestion.restore_s))
                                                    : std::nullopt);
  }

  SplitSession<T> session(net, chain, nn::split_model(global, cfg.model.cuts()), train);

  std::unique_ptr<Controller> ctl;
  if (opt.controller && cfg.controller.enabled) {
    MonitorConfig mc;
    mc.interval = seconds(cfg.controller.interval_s);
    mc.window = seconds(cfg.controller.window_s);
    mc.threshold_bps = cfg.controller.threshold_mbps * 1e6;
    mc.link_u = cfg.congestion.u;
    mc.link_v = cfg.congestion.v;
    PathPolicy pp;
    pp.primary = chain.traversal;
    pp.detour = cfg.controller.detour;
    pp.sr_source = chain.sr_source;
    pp.match_dst = net.node(net.node_id(chain.server)).address;
    pp.match_port = chain.service_port;
    ctl = std::make_unique<Controller>(net, mc, pp, cfg.controller.revert);
    ctl->start();
  }

  std::vector<EpochStats> done;
  std::vector<RoundMetrics> epoch_rounds;
  session.set_round_hook([&](const RoundMetrics& r) {
    if (!r.loss) return;
    if (!epoch_rounds.empty() && epoch_rounds.back().epoch != r.epoch) epoch_rounds.clear();
    epoch_rounds.push_back(r);
    done = epoch_stats(epoch_rounds);
  });

  const SimTime end_time = seconds(cfg.congestion.end_s);
  TrainingOrder order(cfg, ds.size(), batch, timed);
  std::size_t issued = 0;
  session.start([&]() -> std::optional<RoundInput<T>> {
    if (timed ? net.now() >= end_time : issued >= rounds && chain.mode == RunMode::Inference) return std::nullopt;
    RoundInput<T> in;
    if (chain.mode == RunMode::Training) {
      auto nb = order.next(done);
      if (!nb) return std::nullopt;
      in.epoch = static_cast<std::uint32_t>(nb->first);
      in.x = ds.batch_features<T>(nb->second);
      in.labels = ds.batch_labels(nb->second);
    } else {
      std::vector<std::size_t> idx(batch);
      for (std::size_t j = 0; j < batch; ++j) idx[j] = (issued * batch + j) % ds.size();
      in.x = ds.batch_features<T>(idx);
      in.labels = ds.batch_labels(idx);
    }
    ++issued;
    return in;
  });
  net.events().run();
  if (ctl) ctl->stop();

  RunResult res;
  res.label = opt.label;
  res.chaining = chain.chaining;
  res.mode = chain.mode;
  res.batch = batch;
  res.rounds = session.rounds();
  res.epochs = epoch_stats(res.rounds);
  if (ctl) res.reconfigs = ctl->events();
  for (std::size_t k = 0; k < session.stations(); ++k) {
    res.executions.push_back(session.executions(k));
  }
  res.stations.push_back(chain.client);
  res.stations.insert(res.stations.end(), chain.nsfs.begin(), chain.nsfs.end());
  res.stations.push_back(chain.server);
  res.traffic_digest = net.traffic_log().digest();
  res.traffic_records = net.traffic_log().count();
  if (opt.keep_records) res.traffic = net.traffic_log().records();
  res.counters = net.total_counters();
  res.final_model = encode_checkpoint(nn::merge(session.subs()).layers);
  res.flow_tables = json::object();
  for (net::NodeId n = 0; n < net.node_count(); ++n) {
    if (auto* t = net.flow_table(n)) res.flow_tables[net.name(n)] = t->dump();
  }
  res.warnings = net.warnings();
  for (const auto& r : res.rounds) res.failed = res.failed || r.failed;
  return res;
}

template <typename T>
MonolithicResult run_monolithic_t(const ScenarioConfig& cfg) {
  auto global = nn::GlobalModel<T>::init(cfg.model.layer_dims(), cfg.model.seed);
  nn::SubModel<T> model = nn::as_single(global);
  nn::OptimizerState<T> opt;
  const Dataset ds = load_dataset(cfg);
  const std::size_t batch = cfg.batch_sizes.front();
  TrainingOrder order(cfg, ds.size(), batch, false);
  std::vector<RoundMetrics> rounds, epoch_rounds;
  std::vector<EpochStats> done;
  while (auto nb = order.next(done)) {
    const auto x = ds.batch_features<T>(nb->second);
    const auto labels = ds.batch_labels(nb->second);
    const auto logits = model.forward(x);
    const auto loss = nn::loss_and_grad(logits, labels);
    if (!std::isfinite(loss.loss)) throw DivergenceError("monolithic loss is not finite");
    auto back = model.backward(loss.grad, false);
    nn::sgd_step(model, back.grads, opt, cfg.train, nb->first);
    RoundMetrics r;
    r.epoch = static_cast<std::uint32_t>(nb->first);
    r.batch = x.rows();
    r.loss = loss.loss;
    r.correct = loss.correct;
    if (!epoch_rounds.empty() && epoch_rounds.back().epoch != r.epoch) epoch_rounds.clear();
    epoch_rounds.push_back(r);
    done = epoch_stats(epoch_rounds);
    rounds.push_back(std::move(r));
  }
  return {epoch_stats(rounds), encode_checkpoint(model.layers())};
}

SimTime median(std::vector<SimTime> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string traffic_file(const std::string& dir, const std::string& label) {
  if (dir.empty()) return {};
  std::filesystem::create_directories(dir);
  return (std::filesystem::path(dir) / ("traffic_" + label + ".jsonl")).string();
}

}  // namespace

RunResult run_chain(const ScenarioConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  if (cfg.model.precision == "f64") return run_chain_t<double>(cfg, opt);
  return run_chain_t<float>(cfg, opt);
}

MonolithicResult run_monolithic_training(const ScenarioConfig& cfg) {
  cfg.validate();
  if (cfg.model.precision == "f64") return run_monolithic_t<double>(cfg);
  return run_monolithic_t<float>(cfg);
}

SweepRow summarize_inference(const RunResult& r) {
  SweepRow row;
  row.batch = r.batch;
  SimTime fwd = 0, act = 0, res = 0, total = 0;
  SimTime n = 0;
  for (std::size_t i = 1; i < r.rounds.size(); ++i) {
    const auto& m = r.rounds[i];
    if (m.failed) continue;
    fwd += m.forward_compute();
    act += m.transmission(FrameKind::Activation);
    res += m.transmission(FrameKind::Result);
    total += m.total();
    ++n;
  }
  if (n == 0) return row;
  row.forward_compute = fwd / n;
  row.activation_tx = act / n;
  row.result_tx = res / n;
  row.total = total / n;
  row.transmission_share = static_cast<double>(act) / static_cast<double>(fwd + act);
  return row;
}

std::vector<RunResult> run_inference_sweep(const ScenarioConfig& cfg, unsigned jobs, const std::string& traffic_dir) {
  cfg.validate();
  std::vector<RunResult> results(cfg.batch_sizes.size());
  std::vector<std::exception_ptr> errors(cfg.batch_sizes.size());
  auto one = [&](std::size_t i) {
    try {
      RunOptions opt;
      opt.label = "b" + std::to_string(cfg.batch_sizes[i]);
      opt.mode = RunMode::Inference;
      opt.batch = cfg.batch_sizes[i];
      opt.traffic_path = traffic_file(traffic_dir, opt.label);
      results[i] = run_chain(cfg, opt);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  jobs = std::max(1u, jobs);
  for (std::size_t start = 0; start < cfg.batch_sizes.size(); start += jobs) {
    std::vector<std::thread> workers;
    for (std::size_t i = start; i < std::min(cfg.batch_sizes.size(), start + jobs); ++i) {
      workers.emplace_back(one, i);
    }
    for (auto& w : workers) w.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

RunResult run_training(const ScenarioConfig& cfg, const std::string& traffic_dir) {
  RunOptions opt;
  opt.label = "train";
  opt.mode = RunMode::Training;
  opt.traffic_path = traffic_file(traffic_dir, opt.label);
  opt.congestion = cfg.congestion.enabled;
  opt.controller = cfg.congestion.enabled && cfg.controller.enabled;
  return run_chain(cfg, opt);
}

CongestionReport run_congestion_scenario(const ScenarioConfig& cfg, const std::string& traffic_dir) {
  if (!cfg.congestion.enabled) throw ConfigError("congestion scenario needs congestion.enabled = true");
  CongestionReport rep;
  RunOptions opt;
  opt.congestion = true;
  opt.chaining = Chaining::Sfc;
  opt.label = "controlled";
  opt.controller = true;
  opt.traffic_path = traffic_file(traffic_dir, opt.label);
  rep.controlled = run_chain(cfg, opt);
  opt.label = "baseline";
  opt.controller = false;
  opt.traffic_path = traffic_file(traffic_dir, opt.label);
  rep.baseline = run_chain(cfg, opt);

  rep.cap_onset = seconds(cfg.congestion.at_s);
  if (cfg.congestion.restore_s) rep.restore = seconds(*cfg.congestion.restore_s);
  const SimTime horizon = rep.restore.value_or(std::numeric_limits<SimTime>::max());
  if (!rep.controlled.reconfigs.empty()) rep.reconfigured_at = rep.controlled.reconfigs.front().time;

  std::vector<SimTime> pre;
  for (std::size_t i = 1; i < rep.controlled.rounds.size(); ++i) {
    const auto& r = rep.controlled.rounds[i];
    if (r.end <= rep.cap_onset) pre.push_back(r.total());
  }
  rep.pre_cap_latency = median(pre);
  if (rep.reconfigured_at) {
    std::size_t seen = 0;
    for (const auto& r : rep.controlled.rounds) {
      if (r.start < *rep.reconfigured_at || r.end > horizon) continue;
      if (++seen <= CongestionReport::kSettleRounds) continue;
      rep.post_detour_latency = std::max(rep.post_detour_latency, r.total());
    }
  }
  rep.baseline_capped_min = std::numeric_limits<SimTime>::max();
  for (const auto& r : rep.baseline.rounds) {
    if (r.start >= rep.cap_onset && r.end <= horizon) {
      rep.baseline_capped_min = std::min(rep.baseline_capped_min, r.total());
    }
  }
  if (rep.baseline_capped_min == std::numeric_limits<SimTime>::max()) rep.baseline_capped_min = 0;
  return rep;
}

CompareReport compare_chaining_modes(const ScenarioConfig& cfg, const std::string& traffic_dir) {
  CompareReport rep;
  for (Chaining c : {Chaining::Sfc, Chaining::Traditional, Chaining::TransparentNoSrv6}) {
    RunOptions opt;
    opt.label = to_string(c);
    opt.chaining = c;
    opt.mode = RunMode::Inference;
    opt.traffic_path = traffic_file(traffic_dir, opt.label);
    ModeReport m;
    m.chaining = c;
    m.run = run_chain(cfg, opt);
    SimTime sum = 0;
    for (const auto& r : m.run.rounds) sum += r.total();
    if (!m.run.rounds.empty()) {
      m.mean_latency = sum / static_cast<SimTime>(m.run.rounds.size());
      m.forward_path = m.run.rounds.back().forward_path();
      m.return_path = m.run.rounds.back().return_path();
      m.srh_bytes_per_round =
          static_cast<double>(m.run.counters.encap_bytes) / static_cast<double>(m.run.rounds.size());
    }
    for (std::size_t k = 1; k + 1 < m.run.executions.size(); ++k) {
      m.bypass = m.bypass || m.run.executions[k] == 0;
    }
    rep.modes.push_back(std::move(m));
  }
  const auto& sfc = rep.modes[0].run;
  const auto& trad = rep.modes[1].run;
  rep.outputs_match = sfc.rounds.size() == trad.rounds.size() && !sfc.rounds.empty();
  for (std::size_t i = 0; rep.outputs_match && i < sfc.rounds.size(); ++i) {
    rep.outputs_match = sfc.rounds[i].output_digest == trad.rounds[i].output_digest &&
                        !sfc.rounds[i].input_mismatch && !trad.rounds[i].input_mismatch;
  }
  rep.overhead_is_srh_only = sfc.counters.packets == trad.counters.packets &&
                             sfc.counters.wire_bytes - sfc.counters.encap_bytes == trad.counters.wire_bytes &&
                             trad.counters.encap_bytes == 0;
  if (!rep.outputs_match) rep.problems.push_back("sfc and traditional chaining produced different outputs");
  if (!rep.overhead_is_srh_only) rep.problems.push_back("sfc traffic differs from traditional by more than SRv6 headers");
  if (rep.modes[0].bypass) rep.problems.push_back("sfc chaining skipped an NSF");
  if (rep.modes[1].bypass) rep.problems.push_back("traditional chaining skipped an NSF");
  if (rep.modes[0].forward_path != rep.modes[1].forward_path) {
    rep.problems.push_back("sfc and traditional service paths differ");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// output

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

}  // namespace

std::string rounds_csv_header() {
  return "label,chaining,mode,batch,round,epoch,start_ns,end_ns,total_ns,fwd_compute_ns,bwd_compute_ns,"
         "act_tx_ns,grad_tx_ns,result_tx_ns,loss,correct,input_mismatch,failed,forward_path,return_path";
}

void write_rounds_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
  auto out = open_out(path);
  out << rounds_csv_header() << "\n";
  for (const auto& run : runs) {
    for (const auto& r : run.rounds) {
      out << run.label << ',' << to_string(run.chaining) << ',' << to_string(run.mode) << ',' << r.batch << ','
          << r.round << ',' << r.epoch << ',' << r.start << ',' << r.end << ',' << r.total() << ','
          << r.forward_compute() << ',' << r.backward_compute() << ',' << r.transmission(FrameKind::Activation)
          << ',' << r.transmission(FrameKind::Gradient) << ',' << r.transmission(FrameKind::Result) << ','
          << (r.loss ? fmt_double(*r.loss) : "") << ',' << r.correct << ',' << r.input_mismatch << ','
          << r.failed << ',' << join_path(r.forward_path()) << ',' << join_path(r.return_path()) << "\n";
    }
  }
}

void write_nodes_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
  auto out = open_out(path);
  out << "label,batch,round,node,sub,executed,fwd_ns,bwd_ns,wait_ns\n";
  for (const auto& run : runs) {
    for (const auto& r : run.rounds) {
      for (const auto& n : r.nodes) {
        out << run.label << ',' << r.batch << ',' << r.round << ',' << n.node << ',' << n.sub << ','
            << n.executed << ',' << n.forward() << ',' << n.backward() << ',' << n.wait() << "\n";
      }
    }
  }
}

void write_legs_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
  auto out = open_out(path);
  out << "label,batch,round,kind,from,to,send_start_ns,send_end_ns,recv_start_ns,recv_end_ns,bytes,packets,path\n";
  for (const auto& run : runs) {
    for (const auto& r : run.rounds) {
      for (const auto& l : r.legs) {
        out << run.label << ',' << r.batch << ',' << r.round << ',' << to_string(l.kind) << ',' << l.from << ','
            << l.to << ',' << l.send_start << ',' << l.send_end << ',' << l.recv_start << ',' << l.recv_end << ','
            << l.bytes << ',' << l.packets << ',' << join_path(l.path) << "\n";
      }
    }
  }
}

json run_summary(const RunResult& r) {
  json j{{"label", r.label},
         {"chaining", to_string(r.chaining)},
         {"mode", to_string(r.mode)},
         {"batch", r.batch},
         {"rounds", r.rounds.size()},
         {"failed", r.failed},
         {"traffic_digest", hex64(r.traffic_digest)},
         {"traffic_records", r.traffic_records},
         {"model_digest", hex64(fnv1a(r.final_model))},
         {"link_totals",
          {{"packets", r.counters.packets},
           {"wire_bytes", r.counters.wire_bytes},
           {"encap_bytes", r.counters.encap_bytes}}},
         {"warnings", r.warnings}};
  json exec = json::object();
  for (std::size_t k = 0; k < r.stations.size() && k < r.executions.size(); ++k) {
    exec["F" + std::to_string(k + 1) + "@" + r.stations[k]] = r.executions[k];
  }
  j["executions"] = exec;
  j["reconfigurations"] = json::array();
  for (const auto& e : r.reconfigs) j["reconfigurations"].push_back(e.to_json());
  j["epochs"] = json::array();
  for (const auto& e : r.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch}, {"rounds", e.rounds}, {"mean_loss", e.mean_loss}, {"accuracy", e.accuracy}});
  }
  if (!r.rounds.empty()) {
    j["last_forward_path"] = r.rounds.back().forward_path();
    j["last_return_path"] = r.rounds.back().return_path();
    if (r.rounds.back().failed) j["failure"] = r.rounds.back().failure;
  }
  return j;
}

void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

}  // namespace sfcsplit
