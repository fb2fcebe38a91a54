#include "sfcsplit/frame.hpp"

#include <cstring>
#include <string>

namespace sfcsplit {

const char* to_string(FrameKind k) {
  switch (k) {
    case FrameKind::Activation: return "ACTIVATION";
    case FrameKind::Gradient: return "GRADIENT";
    case FrameKind::Result: return "RESULT";
  }
  return "?";
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t pos) {
  if (pos + 4 > in.size()) throw ProtocolError("frame truncated");
  return static_cast<std::uint32_t>(in[pos]) | (static_cast<std::uint32_t>(in[pos + 1]) << 8) |
         (static_cast<std::uint32_t>(in[pos + 2]) << 16) | (static_cast<std::uint32_t>(in[pos + 3]) << 24);
}

void check_magic(std::span<const std::uint8_t> in) {
  if (std::memcmp(in.data() + 4, "NSF1", 4) != 0) throw ProtocolError("bad frame magic");
}

void check_kind_dtype(std::uint8_t kind, std::uint8_t dtype) {
  if (kind < 1 || kind > 3) throw ProtocolError("unknown frame kind " + std::to_string(kind));
  if (dtype != 1 && dtype != 2) throw ProtocolError("unknown frame dtype " + std::to_string(dtype));
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const MessageFrame& f) {
  if (f.dims.size() > 255) throw ProtocolError("frame rank too large");
  std::size_t elems = 1;
  for (auto d : f.dims) elems *= d;
  if (f.payload.size() != (f.dims.empty() ? 0 : elems * dtype_size(f.dtype))) {
    throw ProtocolError("frame payload does not match dims");
  }
  std::vector<std::uint8_t> out;
  out.reserve(f.wire_size());
  put_u32(out, static_cast<std::uint32_t>(f.wire_size()));
  out.insert(out.end(), {'N', 'S', 'F', '1'});
  out.push_back(static_cast<std::uint8_t>(f.kind));
  out.push_back(static_cast<std::uint8_t>(f.dtype));
  out.push_back(static_cast<std::uint8_t>(f.dims.size()));
  out.push_back(f.flags);
  put_u32(out, f.round);
  put_u32(out, f.epoch);
  for (auto d : f.dims) put_u32(out, d);
  put_u32(out, static_cast<std::uint32_t>(4 * f.labels.size()));
  for (auto l : f.labels) put_u32(out, l);
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

MessageFrame decode_frame(std::span<const std::uint8_t> in) {
  if (in.size() < MessageFrame::kFixedHeader) throw ProtocolError("frame truncated");
  const std::uint32_t total = get_u32(in, 0);
  if (total != in.size()) throw ProtocolError("frame length prefix mismatch");
  check_magic(in);
  MessageFrame f;
  check_kind_dtype(in[8], in[9]);
  f.kind = static_cast<FrameKind>(in[8]);
  f.dtype = static_cast<DType>(in[9]);
  const std::size_t rank = in[10];
  f.flags = in[11];
  f.round = get_u32(in, 12);
  f.epoch = get_u32(in, 16);
  std::size_t pos = 20;
  std::size_t elems = 1;
  for (std::size_t i = 0; i < rank; ++i, pos += 4) {
    f.dims.push_back(get_u32(in, pos));
    elems *= f.dims.back();
  }
  const std::uint32_t labels_len = get_u32(in, pos);
  pos += 4;
  if (labels_len % 4 != 0 || pos + labels_len > in.size()) throw ProtocolError("bad labels block");
  for (std::uint32_t i = 0; i < labels_len / 4; ++i, pos += 4) f.labels.push_back(get_u32(in, pos));
  const std::size_t payload = in.size() - pos;
  if (payload != (rank == 0 ? 0 : elems * dtype_size(f.dtype))) {
    throw ProtocolError("frame payload length does not match dims");
  }
  f.payload.assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.end());
  return f;
}

std::vector<MessageFrame> ReassemblyBuffer::feed(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  std::vector<MessageFrame> out;
  std::size_t offset = 0;
  while (true) {
    const std::span<const std::uint8_t> rest(buf_.data() + offset, buf_.size() - offset);
    if (rest.size() < 4) {
      expected_ = 0;
      break;
    }
    expected_ = get_u32(rest, 0);
    if (rest.size() >= 8) check_magic(rest);
    if (rest.size() >= 10) check_kind_dtype(rest[8], rest[9]);
    if (expected_ < MessageFrame::kFixedHeader) throw ProtocolError("declared frame length too small");
    if (rest.size() < expected_) break;
    out.push_back(decode_frame(rest.first(expected_)));
    offset += expected_;
  }
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(offset));
  return out;
}

}  // namespace sfcsplit
