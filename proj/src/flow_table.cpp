#include "sfcsplit/flow_table.hpp"

#include <map>

namespace sfcsplit {

FlowTable::FlowTable(std::size_t capacity, SimTime idle_timeout)
    : capacity_(capacity), idle_timeout_(idle_timeout) {
  if (capacity_ == 0) {
    throw std::invalid_argument("flow table capacity must be positive");
  }
}

void FlowTable::touch(Entry& e, SimTime now) {
  e.last_used = now;
  lru_.splice(lru_.begin(), lru_, e.lru_pos);
}

std::optional<FiveTuple> FlowTable::make_room(const FiveTuple& incoming) {
  if (entries_.contains(incoming) || entries_.size() < capacity_) {
    return std::nullopt;
  }
  FiveTuple victim = lru_.back();
  lru_.pop_back();
  entries_.erase(victim);
  ++evictions_;
  return victim;
}

std::optional<FiveTuple> FlowTable::store(const FiveTuple& key, FlowValue value, SimTime now) {
  value.srh.validate();
  auto evicted = make_room(key);
  if (auto it = entries_.find(key); it != entries_.end()) {
    *it->second.value = std::move(value);
    touch(it->second, now);
    return evicted;
  }
  lru_.push_front(key);
  entries_.emplace(key, Entry{std::make_shared<FlowValue>(std::move(value)), now, lru_.begin()});
  return evicted;
}

const FlowValue* FlowTable::find(const FiveTuple& key, SimTime now) {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    return nullptr;
  }
  touch(it->second, now);
  return it->second.value.get();
}

const FlowValue* FlowTable::peek(const FiveTuple& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second.value.get();
}

void FlowTable::rekey(const FiveTuple& old_flow, const FiveTuple& new_flow, SimTime now) {
  auto old_it = entries_.find(old_flow);
  if (old_it == entries_.end()) {
    throw MissingFlow("rekey: no association for " + old_flow.to_string());
  }
  auto shared = old_it->second.value;
  touch(old_it->second, now);
  if (auto it = entries_.find(new_flow); it != entries_.end()) {
    it->second.value = shared;
    touch(it->second, now);
    return;
  }
  make_room(new_flow);
  lru_.push_front(new_flow);
  entries_.emplace(new_flow, Entry{shared, now, lru_.begin()});
}

bool FlowTable::aliased(const FiveTuple& a, const FiveTuple& b) const {
  auto ia = entries_.find(a);
  auto ib = entries_.find(b);
  return ia != entries_.end() && ib != entries_.end() && ia->second.value == ib->second.value;
}

std::size_t FlowTable::expire(SimTime now) {
  std::size_t dropped = 0;
  while (!lru_.empty()) {
    const auto& key = lru_.back();
    if (now - entries_.at(key).last_used <= idle_timeout_) {
      break;
    }
    entries_.erase(key);
    lru_.pop_back();
    ++dropped;
  }
  return dropped;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

nlohmann::json FlowTable::dump() const {
  // std::map for a stable key order in the output.
  std::map<std::string, std::string> sorted;
  for (const auto& [key, entry] : entries_) {
    sorted.emplace(key.to_string(), to_hex(encode_srh(entry.value->srh)));
  }
  nlohmann::json out = nlohmann::json::object();
  for (auto& [k, v] : sorted) {
    out[k] = v;
  }
  return out;
}

std::optional<IngressResult> ingress_decap(const Srv6Packet& pkt, const Sid& local_sid,
                                           FlowTable& table, SimTime now) {
  auto action = process_endpoint(pkt, local_sid);
  if (std::holds_alternative<endpoint::NotMine>(action)) {
    return std::nullopt;
  }
  FlowValue value;
  if (auto* fwd = std::get_if<endpoint::Forward>(&action)) {
    value = {fwd->packet.outer, fwd->packet.srh};
  } else {
    value = {pkt.outer, pkt.srh};
  }
  IngressResult result{pkt.inner, std::nullopt};
  result.evicted = table.store(five_tuple_of(pkt.inner), std::move(value), now);
  return result;
}

std::optional<Srv6Packet> egress_encap(const InnerPacket& pkt, FlowTable& table, SimTime now) {
  const FlowValue* value = table.find(five_tuple_of(pkt), now);
  if (value == nullptr) {
    return std::nullopt;
  }
  return encapsulate_with(pkt, value->outer, value->srh);
}

std::optional<Srv6Packet> return_encap(const InnerPacket& pkt, FlowTable& table,
                                       const Address& source, const Sid& final_dst, SimTime now) {
  const FlowValue* value = table.find(five_tuple_of(pkt).reversed(), now);
  if (value == nullptr) {
    return std::nullopt;
  }
  Srh srh = reverse_srh(value->srh, final_dst);
  Ipv6Header outer;
  outer.src = source;
  outer.dst = srh.active_sid();
  return encapsulate_with(pkt, outer, srh);
}

void rekey(FlowTable& table, const FiveTuple& old_flow, const FiveTuple& new_flow, SimTime now) {
  table.rekey(old_flow, new_flow, now);
}

}  // namespace sfcsplit
