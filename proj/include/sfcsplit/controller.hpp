#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfcsplit/network.hpp"

namespace sfcsplit {

struct MonitorConfig {
  SimTime interval = kNanosPerSecond;
  SimTime window = 10 * kNanosPerSecond;
  double threshold_bps = 10e6;
  std::string link_u = "v3";
  std::string link_v = "v4";

  std::size_t history_length() const;
  void validate() const;
};

struct PathPolicy {
  std::vector<std::string> primary{"v6", "v7", "v5"};
  std::vector<std::string> detour{"v6", "v9", "v10", "v7", "v5"};
  std::string sr_source = "v2";
  Address match_dst;
  std::uint16_t match_port = 9000;
};

struct ReconfigEvent {
  SimTime time = 0;
  std::vector<std::string> old_list;
  std::vector<std::string> new_list;
  std::string trigger_link;
  std::vector<double> trigger_samples;

  nlohmann::json to_json() const;
};

/// True iff the history is full and every sample is at or below the threshold.
bool detect_congestion(const std::deque<double>& history, std::size_t capacity, double threshold_bps);

/// Samples one link at a fixed interval and moves the SR source to the
/// detour list once congestion has persisted for a full window.
class Controller {
 public:
  Controller(net::Network& net, MonitorConfig monitor, PathPolicy policy, bool revert = false);

  /// Schedules polling every interval, starting one interval from now.
  void start();
  void stop() { running_ = false; }

  double poll();
  bool reconfigure();
  bool restore();

  bool on_detour() const { return on_detour_; }
  const std::deque<double>& history() const { return history_; }
  const std::vector<ReconfigEvent>& events() const { return events_; }
  const std::vector<std::string>& log() const { return log_; }

 private:
  void tick();
  bool apply(const std::vector<std::string>& from, const std::vector<std::string>& to);

  net::Network& net_;
  MonitorConfig monitor_;
  PathPolicy policy_;
  bool revert_;
  std::size_t link_;
  std::deque<double> history_;
  bool on_detour_ = false;
  bool running_ = false;
  std::vector<ReconfigEvent> events_;
  std::vector<std::string> log_;
};

}  // namespace sfcsplit
