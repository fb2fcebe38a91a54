#pragma once

#include <stdexcept>

namespace sfcsplit {

/// Violation of the NSF message protocol: bad framing, unexpected frame kind,
/// out-of-sequence rounds, or shape mismatches at a message boundary.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sfcsplit
