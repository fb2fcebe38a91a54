#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sfcsplit/address.hpp"

namespace sfcsplit {

inline constexpr std::size_t kIpv6HeaderBytes = 40;
inline constexpr std::size_t kTransportHeaderBytes = 20;
inline constexpr std::size_t kSrhFixedBytes = 8;
inline constexpr std::size_t kSidBytes = 16;
inline constexpr std::uint8_t kProtoTcp = 6;
inline constexpr std::uint8_t kProtoIpv6 = 41;
inline constexpr std::uint8_t kProtoRouting = 43;
inline constexpr std::uint8_t kRoutingTypeSrh = 4;
inline constexpr std::uint8_t kDefaultHopLimit = 64;

class InvalidSrh : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by decode_srh for truncated or inconsistent wire bytes.
class MalformedSrh : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Ipv6Header {
  Address src;
  Address dst;
  std::uint8_t next_header = kProtoTcp;
  std::uint16_t payload_len = 0;
  std::uint8_t hop_limit = kDefaultHopLimit;

  bool operator==(const Ipv6Header&) const = default;
};

/// Segment Routing Header. `segments` is stored in reverse traversal order:
/// index 0 is the final segment, the first SID to visit sits at index M-1.
struct Srh {
  std::uint8_t next_header = kProtoIpv6;
  std::uint8_t segments_left = 0;
  std::uint8_t last_entry = 0;
  std::uint8_t flags = 0;
  std::uint16_t tag = 0;
  std::vector<Sid> segments;

  std::size_t wire_size() const { return kSrhFixedBytes + kSidBytes * segments.size(); }
  const Sid& active_sid() const { return segments.at(segments_left); }
  /// Visit order (reverse of storage order).
  std::vector<Sid> traversal() const;
  void validate() const;

  bool operator==(const Srh&) const = default;
};

struct TransportHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint64_t seq = 0;

  bool operator==(const TransportHeader&) const = default;
};

struct InnerPacket {
  Ipv6Header ip;
  TransportHeader tp;
  std::vector<std::uint8_t> payload;

  std::size_t wire_size() const { return kIpv6HeaderBytes + kTransportHeaderBytes + payload.size(); }
  bool operator==(const InnerPacket&) const = default;
};

struct Srv6Packet {
  Ipv6Header outer;
  Srh srh;
  InnerPacket inner;

  std::size_t wire_size() const { return kIpv6HeaderBytes + srh.wire_size() + inner.wire_size(); }
  bool operator==(const Srv6Packet&) const = default;
};

struct FiveTuple {
  std::uint8_t protocol = kProtoTcp;
  Address src_addr;
  Address dst_addr;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;

  FiveTuple reversed() const { return {protocol, dst_addr, src_addr, dst_port, src_port}; }
  std::string to_string() const;

  auto operator<=>(const FiveTuple&) const = default;
  bool operator==(const FiveTuple&) const = default;
};

struct FiveTupleHash {
  std::size_t operator()(const FiveTuple& t) const noexcept;
};

/// Builds a plain stream packet with consistent payload_len.
InnerPacket make_inner_packet(const Address& src, const Address& dst, TransportHeader tp,
                              std::vector<std::uint8_t> payload);

std::vector<std::uint8_t> encode_srh(const Srh& srh);
Srh decode_srh(std::span<const std::uint8_t> bytes);

/// SR-source behaviour: segment list = reverse(traversal), segments_left = M-1,
/// outer destination = first SID to visit.
Srv6Packet encapsulate(InnerPacket inner, std::span<const Sid> traversal, const Address& source);
/// Re-encapsulation with a previously stored outer header and SRH (SFC proxy egress).
Srv6Packet encapsulate_with(InnerPacket inner, const Ipv6Header& outer, const Srh& srh);

namespace endpoint {
struct Forward {
  Srv6Packet packet;
};
struct DecapForward {
  InnerPacket inner;
};
struct NotMine {};
}  // namespace endpoint

using EndpointAction = std::variant<endpoint::Forward, endpoint::DecapForward, endpoint::NotMine>;

EndpointAction process_endpoint(const Srv6Packet& pkt, const Sid& local_sid);

/// Return-path SRH: endpoints of the forward path are visited backwards, the
/// last forward segment is dropped and `new_final_dst` becomes the final
/// segment. segments_left is reset to M-1.
Srh reverse_srh(const Srh& srh, const Sid& new_final_dst);

FiveTuple five_tuple_of(const InnerPacket& pkt);

}  // namespace sfcsplit
