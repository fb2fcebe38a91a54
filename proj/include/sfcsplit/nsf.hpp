#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sfcsplit/errors.hpp"
#include "sfcsplit/frame.hpp"
#include "sfcsplit/network.hpp"
#include "sfcsplit/nn.hpp"

namespace sfcsplit {

enum class RunMode { Inference, Training };
enum class Chaining { Sfc, Traditional, TransparentNoSrv6 };

RunMode parse_run_mode(const std::string& s);
std::string to_string(RunMode m);
Chaining parse_chaining(const std::string& s);
std::string to_string(Chaining c);

/// Placement of the chain on the substrate network.
struct ChainSpec {
  RunMode mode = RunMode::Inference;
  Chaining chaining = Chaining::Sfc;
  std::string client = "v1";
  std::string server = "v8";
  std::string sr_source = "v2";
  std::string sr_endpoint = "v5";
  std::vector<std::string> nsfs{"v6", "v7"};
  std::vector<std::string> traversal{"v6", "v7", "v5"};
  std::uint16_t service_port = 9000;
  std::uint16_t proxy_port = 9100;
  SimTime round_timeout = 60 * kNanosPerSecond;
};

inline constexpr SimTime kUnset = -1;

/// Per-node timestamps of one round. Intervals are [start, end) in event time.
struct NodeTiming {
  std::string node;
  std::size_t sub = 0;  // 1-based sub-model index
  bool executed = false;
  SimTime fwd_start = kUnset;
  SimTime fwd_end = kUnset;
  SimTime bwd_start = kUnset;
  SimTime bwd_end = kUnset;
  SimTime send_act_end = kUnset;
  SimTime recv_grad_start = kUnset;

  SimTime forward() const { return fwd_start == kUnset ? 0 : fwd_end - fwd_start; }
  SimTime backward() const { return bwd_start == kUnset ? 0 : bwd_end - bwd_start; }
  /// Time between finishing the activation send and the first gradient byte.
  SimTime wait() const {
    return (send_act_end == kUnset || recv_grad_start == kUnset) ? 0 : recv_grad_start - send_act_end;
  }
};

/// One frame carried over one stream connection.
struct LegTiming {
  FrameKind kind = FrameKind::Activation;
  std::string from;
  std::string to;
  SimTime send_start = kUnset;
  SimTime send_end = kUnset;
  SimTime recv_start = kUnset;
  SimTime recv_end = kUnset;
  std::size_t bytes = 0;
  std::size_t packets = 0;
  std::vector<std::string> path;

  SimTime duration() const { return recv_end - send_start; }
};

struct RoundMetrics {
  std::uint32_t round = 0;
  std::uint32_t epoch = 0;
  std::size_t batch = 0;
  SimTime start = 0;
  SimTime end = 0;
  std::vector<NodeTiming> nodes;  // chain order: client, NSFs, server
  std::vector<LegTiming> legs;    // in send order
  std::optional<double> loss;
  std::size_t correct = 0;
  std::uint64_t output_digest = 0;  // FNV-1a of the RESULT payload seen by the client
  bool input_mismatch = false;
  bool failed = false;
  std::string failure;

  SimTime total() const { return end - start; }
  SimTime forward_compute() const;
  SimTime backward_compute() const;
  SimTime transmission(FrameKind kind) const;
  SimTime transmission() const;
  /// Node sequence of consecutive legs of the given direction, junctions merged.
  std::vector<std::string> forward_path() const;
  std::vector<std::string> return_path() const;
  const NodeTiming* timing(const std::string& node) const;
};

std::string join_path(const std::vector<std::string>& path);

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
struct RoundInput {
  std::uint32_t epoch = 1;
  Tensor<T> x;
  std::vector<std::uint32_t> labels;  // sent only in training mode
};

/// Client, NSF and server state machines of one split chain, driven by the
/// network's event loop. Rounds run strictly one at a time.
template <typename T>
class SplitSession {
 public:
  using Feed = std::function<std::optional<RoundInput<T>>()>;
  using RoundHook = std::function<void(const RoundMetrics&)>;

  SplitSession(net::Network& net, ChainSpec spec, std::vector<nn::SubModel<T>> subs, nn::TrainConfig train)
      : net_(net), spec_(std::move(spec)), train_(std::move(train)) {
    if (subs.size() != spec_.nsfs.size() + 2) {
      throw ConfigError("chain with " + std::to_string(spec_.nsfs.size()) + " NSFs needs " +
                        std::to_string(spec_.nsfs.size() + 2) + " sub-models, got " +
                        std::to_string(subs.size()));
    }
    std::vector<std::string> order{spec_.client};
    order.insert(order.end(), spec_.nsfs.begin(), spec_.nsfs.end());
    order.push_back(spec_.server);
    for (std::size_t k = 0; k < order.size(); ++k) {
      Station& s = stations_.emplace_back();
      s.node = net_.node_id(order[k]);
      s.pos = k;
      s.sub = std::move(subs[k]);
    }
    install();
  }

  SplitSession(const SplitSession&) = delete;
  SplitSession& operator=(const SplitSession&) = delete;

  void set_round_hook(RoundHook hook) { hook_ = std::move(hook); }

  /// Begins pulling rounds from `feed` at the current simulation time. The
  /// event queue is stopped once the feed is exhausted or a round fails.
  void start(Feed feed) {
    feed_ = std::move(feed);
    next_round();
  }

  bool finished() const { return finished_; }
  const std::vector<RoundMetrics>& rounds() const { return rounds_; }
  const ChainSpec& spec() const { return spec_; }
  std::size_t stations() const { return stations_.size(); }
  const nn::SubModel<T>& sub(std::size_t pos) const { return stations_.at(pos).sub; }
  std::vector<nn::SubModel<T>> subs() const {
    std::vector<nn::SubModel<T>> out;
    for (const auto& s : stations_) out.push_back(s.sub);
    return out;
  }
  /// Forward executions of the sub-model at chain position `pos`.
  std::size_t executions(std::size_t pos) const { return stations_.at(pos).executions; }

 private:
  struct Peer {
    net::StreamEndpoint* ep = nullptr;
    ReassemblyBuffer buf;
    SimTime frame_start = 0;
  };
  struct Station {
    net::NodeId node = 0;
    std::size_t pos = 0;
    nn::SubModel<T> sub;
    nn::OptimizerState<T> opt;
    Peer* up = nullptr;    // accepted connection toward the client
    Peer* down = nullptr;  // opened connection toward the server
    std::optional<std::uint32_t> awaiting;
    bool return_rekeyed = false;
    std::size_t executions = 0;
  };

  bool is_client(const Station& s) const { return s.pos == 0; }
  bool is_server(const Station& s) const { return s.pos + 1 == stations_.size(); }
  bool training() const { return spec_.mode == RunMode::Training; }
  const Address& address_of(const Station& s) const { return net_.node(s.node).address; }

  void install() {
    const Address& server_addr = address_of(stations_.back());
    const bool transparent = spec_.chaining != Chaining::Traditional;
    for (auto& s : stations_) {
      if (is_client(s)) continue;
      const bool nsf = !is_server(s);
      const std::uint16_t port = (nsf && transparent) ? spec_.proxy_port : spec_.service_port;
      net_.listen(s.node, port, [this, &s](net::StreamEndpoint& ep) { on_accept(s, ep); });
      if (nsf && transparent) {
        net_.add_intercept_rule(s.node, InterceptRule{server_addr, spec_.service_port, 1, spec_.proxy_port});
      }
    }
    if (spec_.chaining == Chaining::Sfc) {
      std::vector<Sid> traversal;
      for (const auto& n : spec_.traversal) traversal.push_back(net_.node(net_.node_id(n)).address);
      net_.set_sr_policy(net_.node_id(spec_.sr_source), net::SrPolicy{server_addr, spec_.service_port, traversal});
      net_.set_return_final(net_.node_id(spec_.sr_endpoint), address_of(stations_.front()));
    }
  }

  Peer& new_peer() { return peers_.emplace_back(); }

  void on_accept(Station& s, net::StreamEndpoint& ep) {
    Peer& p = new_peer();
    p.ep = &ep;
    s.up = &p;
    ep.on_data = [this, &s, &p](net::StreamEndpoint&, std::span<const std::uint8_t> bytes,
                                const net::Delivery& d) { on_data(s, p, bytes, d); };
  }

  void on_data(Station& s, Peer& p, std::span<const std::uint8_t> bytes, const net::Delivery& d) {
    if (p.buf.buffered() == 0) p.frame_start = d.time;
    for (auto& frame : p.buf.feed(bytes)) {
      complete_leg(s, frame, p.frame_start, d);
      on_frame(s, p, std::move(frame), p.frame_start);
      p.frame_start = d.time;
    }
  }

  void complete_leg(const Station& s, const MessageFrame& f, SimTime recv_start, const net::Delivery& d) {
    if (!current_ || current_->legs.empty()) throw ProtocolError("frame received outside a round");
    LegTiming& leg = current_->legs.back();
    if (leg.recv_end != kUnset || leg.kind != f.kind) {
      throw ProtocolError(net_.name(s.node) + " received an unexpected " + std::string(to_string(f.kind)) +
                          " frame");
    }
    leg.to = net_.name(s.node);
    leg.recv_start = recv_start;
    leg.recv_end = d.time;
    for (auto h : d.hops) leg.path.push_back(net_.name(h));
  }

  NodeTiming& timing(const Station& s) { return current_->nodes.at(s.pos); }

  void on_frame(Station& s, Peer& p, MessageFrame f, SimTime recv_start) {
    if (f.round != current_->round) {
      throw ProtocolError(net_.name(s.node) + ": frame for round " + std::to_string(f.round) +
                          " during round " + std::to_string(current_->round));
    }
    switch (f.kind) {
      case FrameKind::Activation:
        if (is_client(s) || &p != s.up) throw ProtocolError("activation frame on the wrong connection");
        if (is_server(s)) {
          server_round(s, f);
        } else {
          on_activation(s, f);
        }
        break;
      case FrameKind::Gradient:
        if (is_server(s) || &p != s.down) throw ProtocolError("gradient frame on the wrong connection");
        on_gradient(s, f, recv_start);
        break;
      case FrameKind::Result:
        if (is_server(s) || &p != s.down) throw ProtocolError("result frame on the wrong connection");
        if (is_client(s)) {
          current_->input_mismatch = (f.flags & kFlagInputMismatch) != 0;
          current_->output_digest = fnv1a(f.payload);
          if (training()) {
            fail_round(current_->input_mismatch ? "server could not consume the activation (chain bypassed)"
                                                : "result frame received in training mode");
            return;
          }
          finish_round();
        } else {
          send_frame(s, *s.up, f);
        }
        break;
    }
  }

  void ensure_downstream(Station& s) {
    if (s.down) return;
    const Station& next = stations_.at(s.pos + 1);
    Address dst = address_of(stations_.back());
    std::uint16_t port = spec_.service_port;
    if (spec_.chaining == Chaining::Traditional) {
      dst = address_of(next);
    } else if (s.up) {
      // transparent proxy: reconnect to the original destination of the intercepted flow
      const FiveTuple orig = s.up->ep->rx_tuple();
      dst = orig.dst_addr;
      port = orig.dst_port;
    }
    Peer& p = new_peer();
    p.ep = &net_.connect(s.node, dst, port, [this, &s, &p](net::StreamEndpoint&, std::span<const std::uint8_t> b,
                                                            const net::Delivery& d) { on_data(s, p, b, d); });
    s.down = &p;
    if (spec_.chaining == Chaining::Sfc && !is_client(s)) {
      rekey(*net_.flow_table(s.node), s.up->ep->rx_tuple(), p.ep->tx_tuple, net_.now());
    }
  }

  static MessageFrame outbound(FrameKind kind, std::uint32_t round, std::uint32_t epoch, const Tensor<T>& t) {
    if (!t.all_finite()) {
      throw DivergenceError(std::string("non-finite ") + to_string(kind) + " values in round " + std::to_string(round) +
                            " (epoch " + std::to_string(epoch) + ")");
    }
    return MessageFrame::from_tensor(kind, round, epoch, t);
  }

  net::SendResult send_frame(Station& s, Peer& p, const MessageFrame& f) {
    const auto bytes = encode_frame(f);
    const auto res = net_.send(*p.ep, bytes);
    LegTiming leg;
    leg.kind = f.kind;
    leg.from = net_.name(s.node);
    leg.send_start = res.send_start;
    leg.send_end = res.send_end;
    leg.bytes = bytes.size();
    leg.packets = res.packets;
    current_->legs.push_back(std::move(leg));
    return res;
  }

  void send_activation(Station& s, MessageFrame f) {
    ensure_downstream(s);
    const auto res = send_frame(s, *s.down, f);
    if (training()) {
      s.awaiting = f.round;
      timing(s).send_act_end = res.send_end;
    }
  }

  SimTime run_forward(Station& s, const Tensor<T>& x, Tensor<T>& y) {
    y = s.sub.forward(x);
    ++s.executions;
    const SimTime dt = net_.compute_time(s.node, s.sub.forward_flops(x.rows()));
    NodeTiming& t = timing(s);
    t.executed = true;
    t.fwd_start = net_.now();
    t.fwd_end = t.fwd_start + dt;
    return dt;
  }

  SimTime backward_time(const Station& s, std::size_t batch) const {
    return net_.compute_time(s.node, 2.0 * s.sub.forward_flops(batch));
  }

  void on_activation(Station& s, const MessageFrame& f) {
    const Tensor<T> x = f.template to_tensor<T>();
    if (x.shape.size() != 2 || x.cols() != s.sub.input_dim()) {
      throw ProtocolError(net_.name(s.node) + ": activation " + shape_string(x.shape) +
                          " does not fit sub-model input " + std::to_string(s.sub.input_dim()));
    }
    Tensor<T> y;
    const SimTime dt = run_forward(s, x, y);
    MessageFrame out = outbound(FrameKind::Activation, f.round, f.epoch, y);
    out.labels = f.labels;
    net_.events().schedule_in(dt, [this, &s, out = std::move(out)]() mutable { send_activation(s, std::move(out)); });
  }

  void server_round(Station& s, const MessageFrame& f) {
    NodeTiming& t = timing(s);
    const bool fits = f.dims.size() == 2 && f.dims[1] == s.sub.input_dim();
    if (!fits) {
      current_->input_mismatch = true;
      MessageFrame out;
      out.kind = FrameKind::Result;
      out.dtype = f.dtype;
      out.flags = kFlagInputMismatch;
      out.round = f.round;
      out.epoch = f.epoch;
      send_frame(s, *s.up, out);
      return;
    }
    const Tensor<T> x = f.template to_tensor<T>();
    Tensor<T> logits;
    const SimTime dt_fwd = run_forward(s, x, logits);
    if (!training()) {
      MessageFrame out = outbound(FrameKind::Result, f.round, f.epoch, logits);
      net_.events().schedule_in(dt_fwd, [this, &s, out = std::move(out)]() { send_frame(s, *s.up, out); });
      return;
    }
    if (f.labels.empty()) throw ProtocolError("training activation carries no labels");
    const auto loss = nn::loss_and_grad(logits, f.labels);
    if (!std::isfinite(loss.loss)) {
      throw DivergenceError("loss is not finite in round " + std::to_string(f.round) + " (epoch " +
                            std::to_string(f.epoch) + ")");
    }
    current_->loss = loss.loss;
    current_->correct = loss.correct;
    auto back = s.sub.backward(loss.grad, true);
    nn::sgd_step(s.sub, back.grads, s.opt, train_, static_cast<int>(f.epoch));
    const SimTime dt_bwd = backward_time(s, x.rows());
    t.bwd_start = t.fwd_end;
    t.bwd_end = t.bwd_start + dt_bwd;
    MessageFrame out = outbound(FrameKind::Gradient, f.round, f.epoch, back.input_grad);
    net_.events().schedule_in(dt_fwd + dt_bwd, [this, &s, out = std::move(out)]() { send_frame(s, *s.up, out); });
  }

  void on_gradient(Station& s, const MessageFrame& f, SimTime recv_start) {
    if (!s.awaiting || *s.awaiting != f.round) {
      throw ProtocolError(net_.name(s.node) + ": gradient for unknown round " + std::to_string(f.round));
    }
    s.awaiting.reset();
    NodeTiming& t = timing(s);
    t.recv_grad_start = recv_start;
    if (spec_.chaining == Chaining::Sfc && !is_client(s) && !s.return_rekeyed) {
      rekey(*net_.flow_table(s.node), s.down->ep->rx_tuple(), s.up->ep->tx_tuple, net_.now());
      s.return_rekeyed = true;
    }
    const Tensor<T> g = f.template to_tensor<T>();
    if (g.shape.size() != 2 || g.cols() != s.sub.output_dim()) {
      throw ProtocolError(net_.name(s.node) + ": gradient " + shape_string(g.shape) + " does not fit output " +
                          std::to_string(s.sub.output_dim()));
    }
    auto back = s.sub.backward(g, !is_client(s));
    nn::sgd_step(s.sub, back.grads, s.opt, train_, static_cast<int>(f.epoch));
    const SimTime dt = backward_time(s, g.rows());
    t.bwd_start = net_.now();
    t.bwd_end = t.bwd_start + dt;
    if (is_client(s)) {
      net_.events().schedule_in(dt, [this]() { finish_round(); });
      return;
    }
    MessageFrame out = outbound(FrameKind::Gradient, f.round, f.epoch, back.input_grad);
    net_.events().schedule_in(dt, [this, &s, out = std::move(out)]() { send_frame(s, *s.up, out); });
  }

  void next_round() {
    if (finished_) return;
    auto input = feed_ ? feed_() : std::nullopt;
    if (!input) {
      finish_session();
      return;
    }
    start_round(std::move(*input));
  }

  void start_round(RoundInput<T> in) {
    const std::uint32_t round = next_round_id_++;
    current_.emplace();
    current_->round = round;
    current_->epoch = in.epoch;
    current_->batch = in.x.rows();
    current_->start = net_.now();
    for (const auto& s : stations_) {
      NodeTiming t;
      t.node = net_.name(s.node);
      t.sub = s.pos + 1;
      current_->nodes.push_back(std::move(t));
    }
    net_.events().schedule_in(spec_.round_timeout, [this, round]() {
      if (current_ && current_->round == round) {
        fail_round("timed out after " + std::to_string(to_seconds(spec_.round_timeout)) + " s");
      }
    });
    Station& client = stations_.front();
    Tensor<T> y;
    const SimTime dt = run_forward(client, in.x, y);
    MessageFrame out = outbound(FrameKind::Activation, round, in.epoch, y);
    if (training()) out.labels = std::move(in.labels);
    net_.events().schedule_in(dt, [this, &client, out = std::move(out)]() mutable {
      send_activation(client, std::move(out));
    });
  }

  void finish_round() {
    current_->end = net_.now();
    rounds_.push_back(std::move(*current_));
    current_.reset();
    if (hook_) hook_(rounds_.back());
    next_round();
  }

  void fail_round(std::string why) {
    current_->end = net_.now();
    current_->failed = true;
    current_->failure = std::move(why);
    rounds_.push_back(std::move(*current_));
    current_.reset();
    if (hook_) hook_(rounds_.back());
    finish_session();
  }

  void finish_session() {
    finished_ = true;
    net_.events().stop();
  }

  net::Network& net_;
  ChainSpec spec_;
  nn::TrainConfig train_;
  std::deque<Station> stations_;
  std::deque<Peer> peers_;
  Feed feed_;
  RoundHook hook_;
  std::optional<RoundMetrics> current_;
  std::vector<RoundMetrics> rounds_;
  std::uint32_t next_round_id_ = 1;
  bool finished_ = false;
};

}  // namespace sfcsplit
