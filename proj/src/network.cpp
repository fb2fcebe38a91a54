#include "sfcsplit/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace sfcsplit::net {

namespace {

const std::pair<const char*, Role> kRoleNames[] = {
    {"client", Role::Client},         {"sr_source", Role::SrSource}, {"transit", Role::Transit},
    {"sr_endpoint", Role::SrEndpoint}, {"nsf", Role::Nsf},            {"server", Role::Server},
};

std::uint64_t mbps_to_bps(double mbps) { return static_cast<std::uint64_t>(std::llround(mbps * 1e6)); }

}  // namespace

Role parse_role(const std::string& s) {
  for (const auto& [name, role] : kRoleNames) {
    if (s == name) return role;
  }
  throw TopologyError("unknown node role '" + s + "'");
}

std::string to_string(Role r) {
  for (const auto& [name, role] : kRoleNames) {
    if (r == role) return name;
  }
  return "?";
}

// ---------------------------------------------------------------------------
// config

TopologyConfig TopologyConfig::from_json(const nlohmann::json& j) {
  TopologyConfig cfg;
  for (const auto& jn : j.at("nodes")) {
    NodeSpec n;
    n.id = jn.at("id").get<std::string>();
    for (const auto& r : jn.value("roles", std::vector<std::string>{})) n.roles.insert(parse_role(r));
    n.address = Address::parse(jn.at("address").get<std::string>());
    if (jn.contains("sid")) n.sid = Address::parse(jn.at("sid").get<std::string>());
    if (jn.contains("resources")) {
      const auto& r = jn.at("resources");
      n.resources.compute = r.value("compute", 1.0);
      n.resources.memory = r.value("memory", n.resources.memory);
      n.resources.storage = r.value("storage", n.resources.storage);
    }
    cfg.nodes.push_back(std::move(n));
  }
  for (const auto& jl : j.at("links")) {
    LinkSpec l;
    l.u = jl.at("u").get<std::string>();
    l.v = jl.at("v").get<std::string>();
    l.bandwidth_bps = mbps_to_bps(jl.value("bw_mbps", 1000.0));
    l.prop_delay = static_cast<SimTime>(std::llround(jl.value("delay_us", 50.0) * 1e3));
    l.mtu = jl.value("mtu", std::size_t{9000});
    cfg.links.push_back(l);
  }
  for (const auto& js : j.value("schedules", nlohmann::json::array())) {
    BandwidthSchedule s;
    const auto ends = js.at("link").get<std::vector<std::string>>();
    if (ends.size() != 2) throw TopologyError("schedule link must name two nodes");
    s.u = ends[0];
    s.v = ends[1];
    s.bandwidth_bps = mbps_to_bps(js.at("bw_mbps").get<double>());
    s.at = seconds(js.at("at_s").get<double>());
    if (js.contains("restore_s") && !js.at("restore_s").is_null()) s.restore_at = seconds(js.at("restore_s").get<double>());
    cfg.schedules.push_back(s);
  }
  return cfg;
}

nlohmann::json TopologyConfig::to_json() const {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : nodes) {
    nlohmann::json jn{{"id", n.id}, {"address", n.address.to_string()}};
    jn["roles"] = nlohmann::json::array();
    for (auto r : n.roles) jn["roles"].push_back(to_string(r));
    if (n.sid) jn["sid"] = n.sid->to_string();
    jn["resources"] = {{"compute", n.resources.compute},
                       {"memory", n.resources.memory},
                       {"storage", n.resources.storage}};
    j["nodes"].push_back(jn);
  }
  j["links"] = nlohmann::json::array();
  for (const auto& l : links) {
    j["links"].push_back({{"u", l.u},
                          {"v", l.v},
                          {"bw_mbps", static_cast<double>(l.bandwidth_bps) / 1e6},
                          {"delay_us", static_cast<double>(l.prop_delay) / 1e3},
                          {"mtu", l.mtu}});
  }
  j["schedules"] = nlohmann::json::array();
  for (const auto& s : schedules) {
    nlohmann::json js{{"link", {s.u, s.v}},
                      {"bw_mbps", static_cast<double>(s.bandwidth_bps) / 1e6},
                      {"at_s", to_seconds(s.at)}};
    js["restore_s"] = s.restore_at ? nlohmann::json(to_seconds(*s.restore_at)) : nlohmann::json(nullptr);
    j["schedules"].push_back(js);
  }
  return j;
}

TopologyConfig ten_node_preset() {
  TopologyConfig cfg;
  const std::vector<std::set<Role>> roles = {
      {Role::Client}, {Role::SrSource}, {Role::Transit}, {Role::Transit},   {Role::SrEndpoint},
      {Role::Nsf},    {Role::Nsf},      {Role::Server},  {Role::Transit}, {Role::Transit},
  };
  for (std::size_t i = 0; i < roles.size(); ++i) {
    NodeSpec n;
    n.id = "v" + std::to_string(i + 1);
    n.roles = roles[i];
    n.address = Address::from_u64(0xfc00000000000000ull, i + 1);
    n.sid = n.address;
    cfg.nodes.push_back(n);
  }
  const std::pair<const char*, const char*> edges[] = {
      {"v1", "v2"}, {"v2", "v3"}, {"v3", "v4"},  {"v3", "v6"},  {"v4", "v5"},
      {"v4", "v7"}, {"v5", "v8"}, {"v3", "v9"}, {"v9", "v10"}, {"v10", "v4"},
  };
  for (const auto& [u, v] : edges) cfg.links.push_back(LinkSpec{u, v});
  return cfg;
}

// ---------------------------------------------------------------------------
// traffic log

std::string TrafficRecord::to_json_line() const {
  std::string s;
  s.reserve(96);
  s += "{\"t\":";
  s += std::to_string(time);
  s += ",\"node\":\"";
  s += node;
  s += "\",\"pkt\":";
  s += std::to_string(packet);
  s += ",\"dir\":\"";
  s += direction;
  s += "\",\"sid\":\"";
  s += active_sid;
  s += "\",\"bytes\":";
  s += std::to_string(bytes);
  s += "}";
  return s;
}

void TrafficLog::stream_to(const std::string& path) {
  sink_ = std::make_unique<std::ofstream>(path, std::ios::binary);
  if (!*sink_) throw std::runtime_error("cannot open traffic log " + path);
}

void TrafficLog::append(TrafficRecord rec) {
  std::string line = rec.to_json_line();
  line.push_back('\n');
  for (unsigned char c : line) {
    digest_ ^= c;
    digest_ *= 1099511628211ull;
  }
  ++count_;
  if (sink_) sink_->write(line.data(), static_cast<std::streamsize>(line.size()));
  if (keep_) records_.push_back(std::move(rec));
}

// ---------------------------------------------------------------------------
// packets

std::size_t SimPacket::wire_size() const {
  return std::visit([](const auto& p) { return p.wire_size(); }, body);
}

const InnerPacket& SimPacket::inner() const {
  if (const auto* s = std::get_if<Srv6Packet>(&body)) return s->inner;
  return std::get<InnerPacket>(body);
}

// ---------------------------------------------------------------------------
// network

Network::Network(const TopologyConfig& cfg, ComputeModel compute) : compute_(compute) {
  if (cfg.nodes.size() < 2) throw TopologyError("topology needs at least two nodes");
  std::size_t clients = 0, servers = 0;
  for (const auto& spec : cfg.nodes) {
    for (const auto& other : nodes_) {
      if (other.spec.id == spec.id) throw TopologyError("duplicate node id " + spec.id);
    }
    if (by_address_.contains(spec.address)) throw TopologyError("duplicate address for " + spec.id);
    if (spec.has(Role::Nsf) && !spec.sid) throw TopologyError("NSF node " + spec.id + " has no SID");
    if (spec.sid && *spec.sid != spec.address) {
      throw TopologyError("SID of " + spec.id + " must equal its address");
    }
    if (!(spec.resources.compute > 0.0)) throw TopologyError("compute rate of " + spec.id + " must be positive");
    clients += spec.has(Role::Client);
    servers += spec.has(Role::Server);
    NodeState st;
    st.spec = spec;
    if (spec.has(Role::Nsf) || spec.has(Role::SrEndpoint)) st.table = std::make_unique<FlowTable>();
    by_address_.emplace(spec.address, nodes_.size());
    nodes_.push_back(std::move(st));
  }
  if (clients != 1 || servers != 1) throw TopologyError("exactly one client and one server are required");

  mss_ = std::numeric_limits<std::size_t>::max();
  for (const auto& spec : cfg.links) {
    LinkState ls;
    ls.spec = spec;
    ls.a = node_id(spec.u);
    ls.b = node_id(spec.v);
    if (ls.a == ls.b) throw TopologyError("self-loop on " + spec.u);
    if (spec.bandwidth_bps == 0) throw TopologyError("link bandwidth must be positive");
    if (spec.mtu < 1280) throw TopologyError("link MTU must be at least 1280");
    for (const auto& [nb, _] : nodes_[ls.a].adj) {
      if (nb == ls.b) throw TopologyError("duplicate link " + spec.u + "-" + spec.v);
    }
    mss_ = std::min(mss_, spec.mtu - kIpv6HeaderBytes - kTransportHeaderBytes);
    nodes_[ls.a].adj.emplace_back(ls.b, links_.size());
    nodes_[ls.b].adj.emplace_back(ls.a, links_.size());
    links_.push_back(std::move(ls));
  }
  if (links_.empty()) throw TopologyError("topology has no links");
  for (auto& n : nodes_) std::sort(n.adj.begin(), n.adj.end());
  build_routes();
  for (const auto& s : cfg.schedules) {
    set_link_bandwidth(link_index(s.u, s.v), s.bandwidth_bps, s.at, s.restore_at);
  }
}

void Network::build_routes() {
  const std::size_t n = nodes_.size();
  constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();
  next_hop_.assign(n, std::vector<NodeId>(n, 0));
  for (NodeId dst = 0; dst < n; ++dst) {
    std::vector<std::size_t> dist(n, kInf);
    std::queue<NodeId> q;
    dist[dst] = 0;
    q.push(dst);
    while (!q.empty()) {
      NodeId u = q.front();
      q.pop();
      for (const auto& [v, _] : nodes_[u].adj) {
        if (dist[v] == kInf) {
          dist[v] = dist[u] + 1;
          q.push(v);
        }
      }
    }
    for (NodeId u = 0; u < n; ++u) {
      if (dist[u] == kInf) {
        throw TopologyError("disconnected graph: " + nodes_[u].spec.id + " cannot reach " + nodes_[dst].spec.id);
      }
      if (u == dst) {
        next_hop_[u][dst] = u;
        continue;
      }
      // adjacency is sorted by id, so the first closest neighbour is the lowest id.
      NodeId best = kInf;
      for (const auto& [v, _] : nodes_[u].adj) {
        if (dist[v] + 1 == dist[u]) {
          best = v;
          break;
        }
      }
      next_hop_[u][dst] = best;
    }
  }
}

NodeId Network::node_id(const std::string& name) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].spec.id == name) return i;
  }
  throw TopologyError("unknown node " + name);
}

std::optional<NodeId> Network::node_by_address(const Address& a) const {
  auto it = by_address_.find(a);
  if (it == by_address_.end()) return std::nullopt;
  return it->second;
}

NodeId Network::route_next_hop(NodeId at, const Address& dst) const {
  auto target = node_by_address(dst);
  if (!target) throw RoutingError("unreachable destination " + dst.to_string());
  return next_hop_.at(at).at(*target);
}

std::vector<NodeId> Network::neighbors(NodeId n) const {
  std::vector<NodeId> out;
  for (const auto& [v, _] : nodes_.at(n).adj) out.push_back(v);
  return out;
}

std::size_t Network::link_index(const std::string& u, const std::string& v) const {
  const NodeId a = node_id(u), b = node_id(v);
  for (const auto& [nb, idx] : nodes_[a].adj) {
    if (nb == b) return idx;
  }
  throw TopologyError("unknown link " + u + "-" + v);
}

std::uint64_t Network::bandwidth_at(std::size_t link, SimTime t) const {
  const auto& ls = links_.at(link);
  auto it = ls.changes.upper_bound(t);
  if (it == ls.changes.begin()) return ls.spec.bandwidth_bps;
  return std::prev(it)->second;
}

void Network::set_link_bandwidth(std::size_t link, std::uint64_t bps, SimTime at,
                                 std::optional<SimTime> restore_at) {
  if (bps == 0) throw std::invalid_argument("bandwidth must be positive");
  at = std::max(at, now());
  const std::uint64_t previous = bandwidth_at(link, at);
  auto& ls = links_.at(link);
  ls.changes[at] = bps;
  if (restore_at) {
    if (*restore_at <= at) throw std::invalid_argument("restore time must follow the change");
    ls.changes[*restore_at] = previous;
  }
}

double Network::measure_throughput(std::size_t link, SimTime window) const {
  if (window <= 0) throw std::invalid_argument("measurement window must be positive");
  return static_cast<double>(bandwidth_at(link, now()));
}

SimTime Network::serialization_time(std::size_t bytes, std::uint64_t bps) const {
  // ceil(bytes * 8 * 1e9 / bps) in integer nanoseconds
  const unsigned __int128 num = static_cast<unsigned __int128>(bytes) * 8u * 1'000'000'000u;
  return static_cast<SimTime>((num + bps - 1) / bps);
}

SimTime Network::compute_time(NodeId node, double flops) const {
  const double rate = nodes_.at(node).spec.resources.compute * compute_.base_flops_per_s;
  const auto work = static_cast<SimTime>(std::ceil(flops / rate * 1e9));
  return std::max(compute_.floor, work);
}

LinkCounters Network::total_counters() const {
  LinkCounters total;
  for (const auto& l : links_) {
    total.packets += l.counters.packets;
    total.wire_bytes += l.counters.wire_bytes;
    total.encap_bytes += l.counters.encap_bytes;
  }
  return total;
}

void Network::set_sr_policy(NodeId node, std::optional<SrPolicy> policy) {
  if (policy && policy->traversal.empty()) throw std::invalid_argument("SR policy needs a traversal list");
  nodes_.at(node).sr_policy = std::move(policy);
}

void Network::add_intercept_rule(NodeId node, InterceptRule rule) { nodes_.at(node).rules.push_back(rule); }

void Network::set_return_final(NodeId node, Sid final_dst) {
  if (!nodes_.at(node).table) throw std::invalid_argument(name(node) + " has no flow table");
  nodes_.at(node).return_final = final_dst;
}

FlowTable* Network::flow_table(NodeId node) { return nodes_.at(node).table.get(); }

void Network::listen(NodeId node, std::uint16_t port, AcceptHandler on_accept) {
  nodes_.at(node).listeners[port] = std::move(on_accept);
}

StreamEndpoint& Network::connect(NodeId node, const Address& dst, std::uint16_t dst_port, DataHandler on_data) {
  auto& st = nodes_.at(node);
  StreamEndpoint& ep = endpoints_.emplace_back();
  ep.node = node;
  ep.tx_tuple = FiveTuple{kProtoTcp, st.spec.address, dst, st.next_port++, dst_port};
  ep.on_data = std::move(on_data);
  st.conns[ep.rx_tuple()] = &ep;
  return ep;
}

SendResult Network::send(StreamEndpoint& ep, std::span<const std::uint8_t> bytes) {
  SendResult res;
  res.send_start = now();
  res.send_end = now();
  std::size_t offset = 0;
  do {
    const std::size_t n = std::min(mss_, bytes.size() - offset);
    std::vector<std::uint8_t> chunk(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                                    bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));
    InnerPacket inner = make_inner_packet(ep.tx_tuple.src_addr, ep.tx_tuple.dst_addr,
                                          {ep.tx_tuple.src_port, ep.tx_tuple.dst_port, ep.next_tx_seq},
                                          std::move(chunk));
    ep.next_tx_seq += n;
    ep.bytes_sent += n;
    SimPacket pkt{next_packet_id_++, std::move(inner), {ep.node}};
    if (res.packets == 0) res.first_packet = pkt.id;
    ++res.packets;
    res.send_end = std::max(res.send_end, egress(ep.node, std::move(pkt)));
    offset += n;
  } while (offset < bytes.size());
  return res;
}

SimTime Network::egress(NodeId node, SimPacket pkt) {
  auto& st = nodes_.at(node);
  const InnerPacket& inner = std::get<InnerPacket>(pkt.body);
  if (st.table && st.spec.has(Role::Nsf)) {
    if (auto enc = egress_encap(inner, *st.table, now())) {
      pkt.body = std::move(*enc);
      return forward(node, std::move(pkt));
    }
  }
  if (st.sr_policy && inner.ip.dst == st.sr_policy->match_dst &&
      (st.sr_policy->match_port == 0 || inner.tp.dst_port == st.sr_policy->match_port)) {
    pkt.body = encapsulate(inner, st.sr_policy->traversal, st.spec.address);
    return forward(node, std::move(pkt));
  }
  return forward(node, std::move(pkt));
}

SimTime Network::forward(NodeId node, SimPacket pkt) {
  const Address& dst = pkt.encapsulated() ? std::get<Srv6Packet>(pkt.body).outer.dst : pkt.inner().ip.dst;
  const NodeId next = route_next_hop(node, dst);
  if (next == node) throw RoutingError("forwarding loop: " + name(node) + " routes to itself");
  return transmit(node, next, std::move(pkt));
}

SimTime Network::transmit(NodeId from, NodeId to, SimPacket pkt) {
  std::size_t link = links_.size();
  for (const auto& [nb, idx] : nodes_.at(from).adj) {
    if (nb == to) {
      link = idx;
      break;
    }
  }
  if (link == links_.size()) throw RoutingError(name(from) + " has no link to " + name(to));
  auto& ls = links_[link];
  DirState& dir = ls.dir[from == ls.a ? 0 : 1];
  const std::size_t bytes = pkt.wire_size();
  const SimTime start = std::max(now(), dir.busy_until);
  const SimTime done = start + serialization_time(bytes, bandwidth_at(link, start));
  dir.busy_until = done;
  ls.counters.packets += 1;
  ls.counters.wire_bytes += bytes;
  if (pkt.encapsulated()) ls.counters.encap_bytes += bytes - pkt.inner().wire_size();

  TrafficRecord rec{start, name(from), pkt.id, "tx",
                    pkt.encapsulated() ? std::get<Srv6Packet>(pkt.body).outer.dst.to_string() : "-", bytes};
  log_.append(std::move(rec));
  events_.schedule(done + ls.spec.prop_delay,
                   [this, to, p = std::move(pkt)]() mutable { on_arrival(to, std::move(p)); });
  return done;
}

void Network::log(NodeId node, const SimPacket& pkt, const char* dir) {
  log_.append(TrafficRecord{now(), name(node), pkt.id, dir,
                            pkt.encapsulated() ? std::get<Srv6Packet>(pkt.body).outer.dst.to_string() : "-",
                            pkt.wire_size()});
}

void Network::on_arrival(NodeId node, SimPacket pkt) {
  pkt.hops.push_back(node);
  log(node, pkt, "rx");
  if (tap_) tap_(node, pkt);
  auto& st = nodes_[node];
  if (st.table) st.table->expire(now());
  auto* srv6 = std::get_if<Srv6Packet>(&pkt.body);
  if (srv6 == nullptr) {
    InnerPacket inner = std::get<InnerPacket>(pkt.body);
    process_inner(node, std::move(pkt), std::move(inner));
    return;
  }
  if (srv6->outer.dst != st.spec.address) {
    forward(node, std::move(pkt));
    return;
  }
  if (st.table && st.spec.has(Role::Nsf)) {
    // SFC proxy ingress: decapsulate, remember (outer, SRH) for the flow and
    // hand the inner packet to the local stack.
    auto res = ingress_decap(*srv6, st.spec.address, *st.table, now());
    if (!res) throw RoutingError(name(node) + ": SRv6 packet addressed here but active SID differs");
    if (res->evicted) warnings_.push_back(name(node) + ": flow table evicted " + res->evicted->to_string());
    InnerPacket inner = std::move(res->inner);
    pkt.body = inner;
    process_inner(node, std::move(pkt), std::move(inner));
    return;
  }
  auto action = process_endpoint(*srv6, st.spec.address);
  if (auto* fwd = std::get_if<endpoint::Forward>(&action)) {
    pkt.body = std::move(fwd->packet);
    forward(node, std::move(pkt));
    return;
  }
  auto& decap = std::get<endpoint::DecapForward>(action);
  if (st.table) {
    auto evicted = st.table->store(five_tuple_of(decap.inner), FlowValue{srv6->outer, srv6->srh}, now());
    if (evicted) warnings_.push_back(name(node) + ": flow table evicted " + evicted->to_string());
  }
  InnerPacket inner = std::move(decap.inner);
  pkt.body = inner;
  process_inner(node, std::move(pkt), std::move(inner));
}

void Network::process_inner(NodeId node, SimPacket pkt, InnerPacket inner) {
  auto& st = nodes_[node];
  const FiveTuple tuple = five_tuple_of(inner);
  if (auto it = st.conns.find(tuple); it != st.conns.end()) {
    deliver(node, *it->second, inner, pkt);
    return;
  }
  if (inner.ip.dst == st.spec.address) {
    auto l = st.listeners.find(inner.tp.dst_port);
    if (l == st.listeners.end()) {
      warnings_.push_back(name(node) + ": no listener on port " + std::to_string(inner.tp.dst_port));
      return;
    }
    deliver(node, accept(node, inner, l->second), inner, pkt);
    return;
  }
  for (const auto& rule : st.rules) {
    if (!intercept(inner, rule)) continue;
    auto l = st.listeners.find(rule.redirect_port);
    if (l == st.listeners.end()) {
      warnings_.push_back(name(node) + ": intercepted flow but nothing listens on " +
                          std::to_string(rule.redirect_port));
      return;
    }
    deliver(node, accept(node, inner, l->second), inner, pkt);
    return;
  }
  if (st.return_final && st.table) {
    if (auto enc = return_encap(inner, *st.table, st.spec.address, *st.return_final, now())) {
      pkt.body = std::move(*enc);
      forward(node, std::move(pkt));
      return;
    }
  }
  if (st.spec.has(Role::Nsf) && st.table && !st.table->peek(tuple)) {
    for (const auto& rule : st.rules) {
      if (inner.ip.dst == rule.match_addr) {
        warnings_.push_back(name(node) + ": unchained flow passes through " + tuple.to_string());
        break;
      }
    }
  }
  egress(node, std::move(pkt));
}

StreamEndpoint& Network::accept(NodeId node, const InnerPacket& inner, AcceptHandler& handler) {
  StreamEndpoint& ep = endpoints_.emplace_back();
  ep.node = node;
  ep.tx_tuple = five_tuple_of(inner).reversed();
  nodes_[node].conns[five_tuple_of(inner)] = &ep;
  handler(ep);
  return ep;
}

void Network::deliver(NodeId node, StreamEndpoint& ep, const InnerPacket& inner, const SimPacket& pkt) {
  (void)node;
  if (inner.tp.seq < ep.next_rx_seq) return;  // duplicate
  Delivery d{now(), pkt.id, pkt.hops};
  if (inner.tp.seq > ep.next_rx_seq) {
    ep.out_of_order.emplace(inner.tp.seq, std::make_pair(inner.payload, std::move(d)));
    return;
  }
  auto push = [&ep](const std::vector<std::uint8_t>& bytes, const Delivery& del) {
    ep.next_rx_seq += bytes.size();
    ep.bytes_delivered += bytes.size();
    if (ep.on_data) ep.on_data(ep, bytes, del);
  };
  push(inner.payload, d);
  for (auto it = ep.out_of_order.begin(); it != ep.out_of_order.end() && it->first == ep.next_rx_seq;
       it = ep.out_of_order.erase(it)) {
    push(it->second.first, it->second.second);
  }
}

}  // namespace sfcsplit::net
