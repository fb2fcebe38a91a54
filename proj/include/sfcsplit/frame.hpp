#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "sfcsplit/errors.hpp"
#include "sfcsplit/tensor.hpp"

namespace sfcsplit {

enum class FrameKind : std::uint8_t { Activation = 1, Gradient = 2, Result = 3 };
enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }
const char* to_string(FrameKind k);

/// Set in the reserved byte of a RESULT frame when the receiver could not
/// consume the incoming activation (shape mismatch, e.g. bypassed NSFs).
inline constexpr std::uint8_t kFlagInputMismatch = 0x01;

/// Wire layout (little-endian):
///   total_len u32 | "NSF1" | kind u8 | dtype u8 | rank u8 | reserved u8 |
///   round u32 | epoch u32 | rank x u32 dims | labels_len u32 (bytes) |
///   labels (u32 each) | payload
/// total_len counts the whole frame including itself.
struct MessageFrame {
  FrameKind kind = FrameKind::Activation;
  DType dtype = DType::F32;
  std::uint8_t flags = 0;
  std::uint32_t round = 0;
  std::uint32_t epoch = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> payload;

  static constexpr std::size_t kFixedHeader = 4 + 4 + 4 + 4 + 4 + 4;

  std::size_t wire_size() const { return kFixedHeader + 4 * dims.size() + 4 * labels.size() + payload.size(); }

  template <typename T>
  static MessageFrame from_tensor(FrameKind kind, std::uint32_t round, std::uint32_t epoch, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if (!t.all_finite()) throw ProtocolError("refusing to frame a tensor with non-finite values");
    MessageFrame f;
    f.kind = kind;
    f.dtype = std::is_same_v<T, float> ? DType::F32 : DType::F64;
    f.round = round;
    f.epoch = epoch;
    for (auto d : t.shape) f.dims.push_back(static_cast<std::uint32_t>(d));
    f.payload.reserve(t.data.size() * sizeof(T));
    for (T v : t.data) {
      using U = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
      const U bits = std::bit_cast<U>(v);
      for (std::size_t i = 0; i < sizeof(U); ++i) f.payload.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    return f;
  }

  template <typename T>
  Tensor<T> to_tensor() const {
    using U = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
    if (dtype_size(dtype) != sizeof(T)) throw ProtocolError("frame dtype does not match model precision");
    std::vector<std::size_t> shape(dims.begin(), dims.end());
    const std::size_t n = shape_volume(shape);
    if (payload.size() != n * sizeof(T)) throw ProtocolError("frame payload length mismatch");
    std::vector<T> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      U bits = 0;
      for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(payload[k * sizeof(U) + i]) << (8 * i);
      data[k] = std::bit_cast<T>(bits);
    }
    Tensor<T> t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw ProtocolError("frame carries non-finite values");
    return t;
  }

  bool operator==(const MessageFrame&) const = default;
};

std::vector<std::uint8_t> encode_frame(const MessageFrame& f);
/// Decodes exactly one complete frame; the span must hold exactly total_len bytes.
MessageFrame decode_frame(std::span<const std::uint8_t> bytes);

/// Per-connection byte accumulator. Emits frames exactly when a declared
/// length has been fully received; keeps any partial remainder.
class ReassemblyBuffer {
 public:
  std::vector<MessageFrame> feed(std::span<const std::uint8_t> bytes);
  std::size_t buffered() const { return buf_.size(); }
  /// Declared length of the frame in progress, or 0 while the prefix is incomplete.
  std::size_t expected() const { return expected_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t expected_ = 0;
};

}  // namespace sfcsplit
