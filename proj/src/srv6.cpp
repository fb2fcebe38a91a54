#include "sfcsplit/srv6.hpp"

#include <algorithm>

namespace sfcsplit {

std::vector<Sid> Srh::traversal() const { return {segments.rbegin(), segments.rend()}; }

void Srh::validate() const {
  if (segments.empty() || segments.size() > 255) {
    throw InvalidSrh("segment list must hold 1..255 SIDs, got " + std::to_string(segments.size()));
  }
  if (last_entry != segments.size() - 1) {
    throw InvalidSrh("last_entry must equal M-1");
  }
  if (segments_left > last_entry) {
    throw InvalidSrh("segments_left exceeds last_entry");
  }
}

std::string FiveTuple::to_string() const {
  return std::to_string(protocol) + "|[" + src_addr.to_string() + "]:" + std::to_string(src_port) +
         "|[" + dst_addr.to_string() + "]:" + std::to_string(dst_port);
}

std::size_t FiveTupleHash::operator()(const FiveTuple& t) const noexcept {
  AddressHash ah;
  std::size_t h = ah(t.src_addr);
  h ^= ah(t.dst_addr) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h ^= (static_cast<std::size_t>(t.src_port) << 24) ^ (static_cast<std::size_t>(t.dst_port) << 8) ^
       t.protocol;
  return h;
}

InnerPacket make_inner_packet(const Address& src, const Address& dst, TransportHeader tp,
                              std::vector<std::uint8_t> payload) {
  InnerPacket p;
  p.ip.src = src;
  p.ip.dst = dst;
  p.ip.next_header = kProtoTcp;
  p.ip.payload_len = static_cast<std::uint16_t>(kTransportHeaderBytes + payload.size());
  p.tp = tp;
  p.payload = std::move(payload);
  return p;
}

std::vector<std::uint8_t> encode_srh(const Srh& srh) {
  srh.validate();
  const std::size_t m = srh.segments.size();
  std::vector<std::uint8_t> out;
  out.reserve(srh.wire_size());
  out.push_back(srh.next_header);
  out.push_back(static_cast<std::uint8_t>(2 * m));
  out.push_back(kRoutingTypeSrh);
  out.push_back(srh.segments_left);
  out.push_back(srh.last_entry);
  out.push_back(srh.flags);
  out.push_back(static_cast<std::uint8_t>(srh.tag >> 8));
  out.push_back(static_cast<std::uint8_t>(srh.tag & 0xff));
  for (const auto& sid : srh.segments) {
    out.insert(out.end(), sid.bytes.begin(), sid.bytes.end());
  }
  return out;
}

Srh decode_srh(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kSrhFixedBytes) {
    throw MalformedSrh("truncated SRH: " + std::to_string(bytes.size()) + " bytes");
  }
  if (bytes[2] != kRoutingTypeSrh) {
    throw MalformedSrh("routing type " + std::to_string(bytes[2]) + " is not SRH");
  }
  Srh srh;
  srh.next_header = bytes[0];
  const std::uint8_t hdr_ext_len = bytes[1];
  srh.segments_left = bytes[3];
  srh.last_entry = bytes[4];
  srh.flags = bytes[5];
  srh.tag = static_cast<std::uint16_t>((bytes[6] << 8) | bytes[7]);
  const std::size_t m = static_cast<std::size_t>(srh.last_entry) + 1;
  if (hdr_ext_len != 2 * m) {
    throw MalformedSrh("hdr_ext_len " + std::to_string(hdr_ext_len) + " inconsistent with last_entry " +
                       std::to_string(srh.last_entry));
  }
  if (srh.segments_left > srh.last_entry) {
    throw MalformedSrh("segments_left exceeds last_entry");
  }
  if (bytes.size() < kSrhFixedBytes + kSidBytes * m) {
    throw MalformedSrh("truncated segment list");
  }
  srh.segments.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto first = bytes.begin() + static_cast<std::ptrdiff_t>(kSrhFixedBytes + kSidBytes * i);
    std::copy(first, first + kSidBytes, srh.segments[i].bytes.begin());
  }
  return srh;
}

Srv6Packet encapsulate(InnerPacket inner, std::span<const Sid> traversal, const Address& source) {
  if (traversal.empty()) {
    throw InvalidSrh("empty traversal list");
  }
  Srh srh;
  srh.segments.assign(traversal.rbegin(), traversal.rend());
  srh.last_entry = static_cast<std::uint8_t>(srh.segments.size() - 1);
  srh.segments_left = srh.last_entry;
  srh.validate();

  Ipv6Header outer;
  outer.src = source;
  outer.dst = traversal.front();
  outer.next_header = kProtoRouting;
  return encapsulate_with(std::move(inner), outer, srh);
}

Srv6Packet encapsulate_with(InnerPacket inner, const Ipv6Header& outer, const Srh& srh) {
  Srv6Packet pkt{outer, srh, std::move(inner)};
  pkt.outer.next_header = kProtoRouting;
  pkt.outer.payload_len = static_cast<std::uint16_t>(pkt.srh.wire_size() + pkt.inner.wire_size());
  return pkt;
}

EndpointAction process_endpoint(const Srv6Packet& pkt, const Sid& local_sid) {
  if (pkt.outer.dst != local_sid) {
    return endpoint::NotMine{};
  }
  if (pkt.srh.segments_left == 0) {
    return endpoint::DecapForward{pkt.inner};
  }
  Srv6Packet next = pkt;
  next.srh.segments_left -= 1;
  next.outer.dst = next.srh.segments[next.srh.segments_left];
  return endpoint::Forward{std::move(next)};
}

Srh reverse_srh(const Srh& srh, const Sid& new_final_dst) {
  srh.validate();
  const std::size_t m = srh.segments.size();
  Srh out = srh;
  out.segments[0] = new_final_dst;
  for (std::size_t j = 1; j < m; ++j) {
    out.segments[j] = srh.segments[m - j];
  }
  out.segments_left = out.last_entry;
  return out;
}

FiveTuple five_tuple_of(const InnerPacket& pkt) {
  return {kProtoTcp, pkt.ip.src, pkt.ip.dst, pkt.tp.src_port, pkt.tp.dst_port};
}

}  // namespace sfcsplit
