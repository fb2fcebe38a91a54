#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace sfcsplit {

/// 128-bit IPv6-style address. Segment identifiers share this space: a
/// node's SID is its address.
struct Address {
  std::array<std::uint8_t, 16> bytes{};

  static Address parse(std::string_view text);
  static Address from_u64(std::uint64_t hi, std::uint64_t lo);
  std::string to_string() const;

  auto operator<=>(const Address&) const = default;
  bool operator==(const Address&) const = default;
};

using Sid = Address;

struct AddressHash {
  std::size_t operator()(const Address& a) const noexcept;
};

}  // namespace sfcsplit
