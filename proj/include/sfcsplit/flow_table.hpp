#pragma once

#include <cstddef>
#include <cstdint>
#include <list>
#include <memory>
#include <optional>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "sfcsplit/sim_time.hpp"
#include "sfcsplit/srv6.hpp"

namespace sfcsplit {

class MissingFlow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowValue {
  Ipv6Header outer;
  Srh srh;

  bool operator==(const FlowValue&) const = default;
};

/// SFC-proxy association table: inner 5-tuple -> (outer header, SRH).
///
/// A rekeyed flow aliases the value of the flow it was derived from, so a
/// later ingress that overwrites the original entry is observed through every
/// alias. Capacity overflow evicts the least recently used key; keys idle for
/// longer than the idle timeout are dropped by expire().
class FlowTable {
 public:
  static constexpr std::size_t kDefaultCapacity = 4096;
  static constexpr SimTime kDefaultIdleTimeout = 300 * kNanosPerSecond;

  explicit FlowTable(std::size_t capacity = kDefaultCapacity,
                     SimTime idle_timeout = kDefaultIdleTimeout);

  /// Inserts or overwrites. Returns the evicted key when capacity forced one out.
  std::optional<FiveTuple> store(const FiveTuple& key, FlowValue value, SimTime now);
  const FlowValue* find(const FiveTuple& key, SimTime now);
  const FlowValue* peek(const FiveTuple& key) const;
  void rekey(const FiveTuple& old_flow, const FiveTuple& new_flow, SimTime now);
  bool aliased(const FiveTuple& a, const FiveTuple& b) const;
  std::size_t expire(SimTime now);

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t evictions() const { return evictions_; }

  /// {canonical 5-tuple: hex SRH}
  nlohmann::json dump() const;

 private:
  struct Entry {
    std::shared_ptr<FlowValue> value;
    SimTime last_used = 0;
    std::list<FiveTuple>::iterator lru_pos;
  };

  std::optional<FiveTuple> make_room(const FiveTuple& incoming);
  void touch(Entry& e, SimTime now);

  std::size_t capacity_;
  SimTime idle_timeout_;
  std::unordered_map<FiveTuple, Entry, FiveTupleHash> entries_;
  std::list<FiveTuple> lru_;  // front = most recent
  std::uint64_t evictions_ = 0;
};

struct IngressResult {
  InnerPacket inner;
  std::optional<FiveTuple> evicted;
};

/// Endpoint processing plus association store. Returns nullopt (table
/// untouched) when the packet is not addressed to `local_sid`.
std::optional<IngressResult> ingress_decap(const Srv6Packet& pkt, const Sid& local_sid,
                                           FlowTable& table, SimTime now);

/// nullopt means pass-through: no association for this flow.
std::optional<Srv6Packet> egress_encap(const InnerPacket& pkt, FlowTable& table, SimTime now);

/// Return-path SR source: if the reversed 5-tuple of `pkt` was stored on the
/// forward path, encapsulate it with the reversed segment list.
std::optional<Srv6Packet> return_encap(const InnerPacket& pkt, FlowTable& table,
                                       const Address& source, const Sid& final_dst, SimTime now);

void rekey(FlowTable& table, const FiveTuple& old_flow, const FiveTuple& new_flow, SimTime now);

std::string to_hex(std::span<const std::uint8_t> bytes);

}  // namespace sfcsplit
