#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sfcsplit/event_queue.hpp"
#include "sfcsplit/flow_table.hpp"
#include "sfcsplit/intercept.hpp"
#include "sfcsplit/sim_time.hpp"
#include "sfcsplit/srv6.hpp"

namespace sfcsplit::net {

using NodeId = std::size_t;

enum class Role { Client, SrSource, Transit, SrEndpoint, Nsf, Server };

Role parse_role(const std::string& s);
std::string to_string(Role r);

struct Resources {
  double compute = 1.0;  // relative compute rate C_com
  std::uint64_t memory = 8ull << 30;
  std::uint64_t storage = 64ull << 30;
};

struct NodeSpec {
  std::string id;
  std::set<Role> roles;
  Address address;
  std::optional<Sid> sid;
  Resources resources;

  bool has(Role r) const { return roles.contains(r); }
};

struct LinkSpec {
  std::string u;
  std::string v;
  std::uint64_t bandwidth_bps = 1'000'000'000;
  SimTime prop_delay = 50 * kNanosPerMicro;
  std::size_t mtu = 9000;
};

struct BandwidthSchedule {
  std::string u;
  std::string v;
  std::uint64_t bandwidth_bps = 0;
  SimTime at = 0;
  std::optional<SimTime> restore_at;
};

struct TopologyConfig {
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> links;
  std::vector<BandwidthSchedule> schedules;

  static TopologyConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Ten-node evaluation topology: v1 client, v2 SR source, v3/v4 transit
/// routers, v5 SR endpoint, v6/v7 NSFs, v8 server, v9/v10 detour routers.
TopologyConfig ten_node_preset();

/// NSF processing-time model: max(floor, flops / (C_com * base_rate)).
struct ComputeModel {
  double base_flops_per_s = 1e12;
  SimTime floor = 500 * kNanosPerMicro;
};

struct TrafficRecord {
  SimTime time = 0;
  std::string node;
  std::uint64_t packet = 0;
  std::string direction;  // "tx" | "rx"
  std::string active_sid;  // "-" for plain packets
  std::size_t bytes = 0;

  std::string to_json_line() const;
};

/// Append-only packet log. Always folds records into a running FNV-1a digest;
/// optionally keeps them in memory and/or streams them as JSON lines.
class TrafficLog {
 public:
  void append(TrafficRecord rec);
  void keep_records(bool keep) { keep_ = keep; }
  void stream_to(const std::string& path);
  const std::vector<TrafficRecord>& records() const { return records_; }
  std::uint64_t digest() const { return digest_; }
  std::uint64_t count() const { return count_; }

 private:
  bool keep_ = false;
  std::vector<TrafficRecord> records_;
  std::unique_ptr<std::ofstream> sink_;
  std::uint64_t digest_ = 1469598103934665603ull;
  std::uint64_t count_ = 0;
};

struct SimPacket {
  std::uint64_t id = 0;
  std::variant<InnerPacket, Srv6Packet> body;
  std::vector<NodeId> hops;  // origin followed by every node that received it

  std::size_t wire_size() const;
  bool encapsulated() const { return std::holds_alternative<Srv6Packet>(body); }
  const InnerPacket& inner() const;
};

struct Delivery {
  SimTime time = 0;
  std::uint64_t packet_id = 0;
  std::vector<NodeId> hops;
};

struct StreamEndpoint;
using DataHandler = std::function<void(StreamEndpoint&, std::span<const std::uint8_t>, const Delivery&)>;
using AcceptHandler = std::function<void(StreamEndpoint&)>;

/// One side of a reliable, in-order, lossless byte stream.
struct StreamEndpoint {
  NodeId node = 0;
  FiveTuple tx_tuple;  // 5-tuple carried by packets this side sends
  std::uint64_t next_tx_seq = 0;
  std::uint64_t next_rx_seq = 0;
  std::map<std::uint64_t, std::pair<std::vector<std::uint8_t>, Delivery>> out_of_order;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_delivered = 0;
  DataHandler on_data;

  FiveTuple rx_tuple() const { return tx_tuple.reversed(); }
};

struct SendResult {
  SimTime send_start = 0;
  SimTime send_end = 0;  // last segment fully serialized onto the first link
  std::uint64_t first_packet = 0;
  std::size_t packets = 0;
};

/// Source-routing policy installed on an SR source node.
struct SrPolicy {
  Address match_dst;
  std::uint16_t match_port = 0;
  std::vector<Sid> traversal;
};

struct LinkCounters {
  std::uint64_t packets = 0;
  std::uint64_t wire_bytes = 0;
  std::uint64_t encap_bytes = 0;  // outer header + SRH portion of wire_bytes
};

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RoutingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Network {
 public:
  explicit Network(const TopologyConfig& cfg, ComputeModel compute = {});
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  // ---- topology ----
  std::size_t node_count() const { return nodes_.size(); }
  NodeId node_id(const std::string& name) const;
  const NodeSpec& node(NodeId id) const { return nodes_.at(id).spec; }
  const std::string& name(NodeId id) const { return nodes_.at(id).spec.id; }
  std::optional<NodeId> node_by_address(const Address& a) const;
  NodeId route_next_hop(NodeId at, const Address& dst) const;
  std::vector<NodeId> neighbors(NodeId n) const;
  std::size_t link_index(const std::string& u, const std::string& v) const;
  const LinkSpec& link(std::size_t idx) const { return links_.at(idx).spec; }
  std::size_t mss() const { return mss_; }

  // ---- time ----
  EventQueue& events() { return events_; }
  SimTime now() const { return events_.now(); }
  void run_until(SimTime t) { events_.run_until(t); }

  // ---- links ----
  std::uint64_t bandwidth_at(std::size_t link, SimTime t) const;
  /// Schedules a capacity change at `at` (and the reverse change at restore_at).
  void set_link_bandwidth(std::size_t link, std::uint64_t bps, SimTime at, std::optional<SimTime> restore_at);
  /// Capacity available to new flows: the configured rate in force at the
  /// end of the window.
  double measure_throughput(std::size_t link, SimTime window) const;
  SimTime serialization_time(std::size_t bytes, std::uint64_t bps) const;
  /// Puts a packet on the (from -> to) link direction; returns the time the
  /// last bit leaves `from`.
  SimTime transmit(NodeId from, NodeId to, SimPacket pkt);
  /// Locally originated packet: SFC-proxy egress / SR source policy, then routing.
  SimTime egress(NodeId node, SimPacket pkt);
  const LinkCounters& counters(std::size_t link) const { return links_.at(link).counters; }
  LinkCounters total_counters() const;

  // ---- compute ----
  SimTime compute_time(NodeId node, double flops) const;
  const ComputeModel& compute_model() const { return compute_; }

  // ---- dataplane configuration ----
  void set_sr_policy(NodeId node, std::optional<SrPolicy> policy);
  const std::optional<SrPolicy>& sr_policy(NodeId node) const { return nodes_.at(node).sr_policy; }
  void add_intercept_rule(NodeId node, InterceptRule rule);
  /// Enables return-path SRH construction at an SR endpoint.
  void set_return_final(NodeId node, Sid final_dst);
  FlowTable* flow_table(NodeId node);

  // ---- streams ----
  void listen(NodeId node, std::uint16_t port, AcceptHandler on_accept);
  StreamEndpoint& connect(NodeId node, const Address& dst, std::uint16_t dst_port, DataHandler on_data);
  /// Segments `bytes` into MSS-sized packets and hands them to the node's egress path.
  SendResult send(StreamEndpoint& ep, std::span<const std::uint8_t> bytes);

  // ---- observability ----
  TrafficLog& traffic_log() { return log_; }
  using PacketTap = std::function<void(NodeId, const SimPacket&)>;
  void set_tap(PacketTap tap) { tap_ = std::move(tap); }
  std::vector<std::string>& warnings() { return warnings_; }

 private:
  struct DirState {
    SimTime busy_until = 0;
  };
  struct LinkState {
    LinkSpec spec;
    NodeId a = 0;
    NodeId b = 0;
    std::map<SimTime, std::uint64_t> changes;
    DirState dir[2];
    LinkCounters counters;
  };
  struct NodeState {
    NodeSpec spec;
    std::vector<std::pair<NodeId, std::size_t>> adj;  // neighbor, link index
    std::unique_ptr<FlowTable> table;
    std::optional<SrPolicy> sr_policy;
    std::optional<Sid> return_final;
    std::vector<InterceptRule> rules;
    std::map<std::uint16_t, AcceptHandler> listeners;
    std::unordered_map<FiveTuple, StreamEndpoint*, FiveTupleHash> conns;  // keyed by rx tuple
    std::uint16_t next_port = 40001;
  };

  void build_routes();
  void on_arrival(NodeId node, SimPacket pkt);
  void process_inner(NodeId node, SimPacket pkt, InnerPacket inner);
  SimTime forward(NodeId node, SimPacket pkt);
  void deliver(NodeId node, StreamEndpoint& ep, const InnerPacket& inner, const SimPacket& pkt);
  StreamEndpoint& accept(NodeId node, const InnerPacket& inner, AcceptHandler& handler);
  void log(NodeId node, const SimPacket& pkt, const char* dir);

  std::vector<NodeState> nodes_;
  std::vector<LinkState> links_;
  std::unordered_map<Address, NodeId, AddressHash> by_address_;
  std::vector<std::vector<NodeId>> next_hop_;  // [at][dst]
  std::deque<StreamEndpoint> endpoints_;
  EventQueue events_;
  ComputeModel compute_;
  TrafficLog log_;
  PacketTap tap_;
  std::vector<std::string> warnings_;
  std::uint64_t next_packet_id_ = 1;
  std::size_t mss_ = 0;
};

}  // namespace sfcsplit::net
