#include "sfcsplit/address.hpp"

#include <arpa/inet.h>

#include <cstring>
#include <stdexcept>

namespace sfcsplit {

Address Address::parse(std::string_view text) {
  std::string buf(text);
  Address out;
  if (inet_pton(AF_INET6, buf.c_str(), out.bytes.data()) != 1) {
    throw std::invalid_argument("invalid IPv6 address: " + buf);
  }
  return out;
}

Address Address::from_u64(std::uint64_t hi, std::uint64_t lo) {
  Address out;
  for (int i = 0; i < 8; ++i) {
    out.bytes[i] = static_cast<std::uint8_t>(hi >> (56 - 8 * i));
    out.bytes[8 + i] = static_cast<std::uint8_t>(lo >> (56 - 8 * i));
  }
  return out;
}

std::string Address::to_string() const {
  char buf[INET6_ADDRSTRLEN];
  inet_ntop(AF_INET6, bytes.data(), buf, sizeof(buf));
  return buf;
}

std::size_t AddressHash::operator()(const Address& a) const noexcept {
  // FNV-1a
  std::uint64_t h = 1469598103934665603ull;
  for (auto b : a.bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return static_cast<std::size_t>(h);
}

}  // namespace sfcsplit
