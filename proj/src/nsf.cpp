#include "sfcsplit/nsf.hpp"

namespace sfcsplit {

RunMode parse_run_mode(const std::string& s) {
  if (s == "inference") return RunMode::Inference;
  if (s == "training") return RunMode::Training;
  throw ConfigError("unknown mode '" + s + "' (expected inference|training)");
}

std::string to_string(RunMode m) { return m == RunMode::Inference ? "inference" : "training"; }

Chaining parse_chaining(const std::string& s) {
  if (s == "sfc") return Chaining::Sfc;
  if (s == "traditional") return Chaining::Traditional;
  if (s == "transparent-no-srv6") return Chaining::TransparentNoSrv6;
  throw ConfigError("unknown chaining '" + s + "' (expected sfc|traditional|transparent-no-srv6)");
}

std::string to_string(Chaining c) {
  switch (c) {
    case Chaining::Sfc:
      return "sfc";
    case Chaining::Traditional:
      return "traditional";
    case Chaining::TransparentNoSrv6:
      return "transparent-no-srv6";
  }
  return "?";
}

SimTime RoundMetrics::forward_compute() const {
  SimTime s = 0;
  for (const auto& n : nodes) s += n.forward();
  return s;
}

SimTime RoundMetrics::backward_compute() const {
  SimTime s = 0;
  for (const auto& n : nodes) s += n.backward();
  return s;
}

SimTime RoundMetrics::transmission(FrameKind kind) const {
  SimTime s = 0;
  for (const auto& l : legs) {
    if (l.kind == kind && l.recv_end != kUnset) s += l.duration();
  }
  return s;
}

SimTime RoundMetrics::transmission() const {
  return transmission(FrameKind::Activation) + transmission(FrameKind::Gradient) + transmission(FrameKind::Result);
}

namespace {

std::vector<std::string> merge_legs(const std::vector<LegTiming>& legs, bool forward) {
  std::vector<std::string> path;
  for (const auto& l : legs) {
    if ((l.kind == FrameKind::Activation) != forward) continue;
    auto it = l.path.begin();
    if (!path.empty() && it != l.path.end() && *it == path.back()) ++it;
    path.insert(path.end(), it, l.path.end());
  }
  return path;
}

}  // namespace

std::vector<std::string> RoundMetrics::forward_path() const { return merge_legs(legs, true); }

std::vector<std::string> RoundMetrics::return_path() const { return merge_legs(legs, false); }

const NodeTiming* RoundMetrics::timing(const std::string& node) const {
  for (const auto& n : nodes) {
    if (n.node == node) return &n;
  }
  return nullptr;
}

std::string join_path(const std::vector<std::string>& path) {
  std::string s;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) s += ">";
    s += path[i];
  }
  return s;
}

}  // namespace sfcsplit
