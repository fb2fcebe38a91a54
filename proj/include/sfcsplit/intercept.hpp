#pragma once

#include <cstdint>

#include "sfcsplit/srv6.hpp"

namespace sfcsplit {

/// Transparent-interception rule: packets whose destination (address, port)
/// match are marked and handed to the local proxy listening on redirect_port.
struct InterceptRule {
  Address match_addr;
  std::uint16_t match_port = 0;
  std::uint32_t mark = 1;
  std::uint16_t redirect_port = 0;
};

/// Pure predicate; the packet is never modified.
inline bool intercept(const InnerPacket& pkt, const InterceptRule& rule) {
  return pkt.ip.dst == rule.match_addr && pkt.tp.dst_port == rule.match_port;
}

}  // namespace sfcsplit
