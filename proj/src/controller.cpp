#include "sfcsplit/controller.hpp"

#include "sfcsplit/errors.hpp"

namespace sfcsplit {

std::size_t MonitorConfig::history_length() const { return static_cast<std::size_t>(window / interval); }

void MonitorConfig::validate() const {
  if (interval <= 0) throw ConfigError("monitor interval must be positive");
  if (window < interval) throw ConfigError("monitor window must be at least one interval");
  if (!(threshold_bps > 0.0)) throw ConfigError("congestion threshold must be positive");
}

nlohmann::json ReconfigEvent::to_json() const {
  return {{"t_ns", time},
          {"old_list", old_list},
          {"new_list", new_list},
          {"trigger_link", trigger_link},
          {"trigger_samples_bps", trigger_samples}};
}

bool detect_congestion(const std::deque<double>& history, std::size_t capacity, double threshold_bps) {
  if (capacity == 0 || history.size() < capacity) return false;
  for (double s : history) {
    if (s > threshold_bps) return false;
  }
  return true;
}

Controller::Controller(net::Network& net, MonitorConfig monitor, PathPolicy policy, bool revert)
    : net_(net), monitor_(std::move(monitor)), policy_(std::move(policy)), revert_(revert) {
  monitor_.validate();
  if (policy_.primary.empty() || policy_.detour.empty()) throw ConfigError("path policy lists must be non-empty");
  link_ = net_.link_index(monitor_.link_u, monitor_.link_v);
}

void Controller::start() {
  running_ = true;
  net_.events().schedule_in(monitor_.interval, [this] { tick(); });
}

double Controller::poll() {
  const double sample = net_.measure_throughput(link_, monitor_.interval);
  history_.push_back(sample);
  while (history_.size() > monitor_.history_length()) history_.pop_front();
  return sample;
}

void Controller::tick() {
  if (!running_) return;
  poll();
  const std::size_t cap = monitor_.history_length();
  if (!on_detour_ && detect_congestion(history_, cap, monitor_.threshold_bps)) {
    reconfigure();
  } else if (on_detour_ && revert_ && history_.size() == cap) {
    bool clear = true;
    for (double s : history_) clear = clear && s > monitor_.threshold_bps;
    if (clear) restore();
  }
  net_.events().schedule_in(monitor_.interval, [this] { tick(); });
}

bool Controller::apply(const std::vector<std::string>& from, const std::vector<std::string>& to) {
  std::vector<Sid> traversal;
  for (const auto& n : to) traversal.push_back(net_.node(net_.node_id(n)).address);
  net_.set_sr_policy(net_.node_id(policy_.sr_source),
                     net::SrPolicy{policy_.match_dst, policy_.match_port, std::move(traversal)});
  ReconfigEvent ev;
  ev.time = net_.now();
  ev.old_list = from;
  ev.new_list = to;
  ev.trigger_link = monitor_.link_u + "-" + monitor_.link_v;
  ev.trigger_samples.assign(history_.begin(), history_.end());
  events_.push_back(std::move(ev));
  return true;
}

bool Controller::reconfigure() {
  if (on_detour_) {
    log_.push_back("reconfigure ignored: already on detour");
    return false;
  }
  on_detour_ = true;
  return apply(policy_.primary, policy_.detour);
}

bool Controller::restore() {
  if (!on_detour_) {
    log_.push_back("restore ignored: already on primary path");
    return false;
  }
  on_detour_ = false;
  return apply(policy_.detour, policy_.primary);
}

}  // namespace sfcsplit
