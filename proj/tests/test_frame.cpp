#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "sfcsplit/frame.hpp"

using namespace sfcsplit;

namespace {

MessageFrame sample_frame() {
  Tensor<float> t({2, 3}, {1.0f, -2.5f, 3.25f, 0.0f, 1e-3f, 7.0f});
  auto f = MessageFrame::from_tensor(FrameKind::Activation, 5, 2, t);
  f.labels = {3, 1};
  return f;
}

}  // namespace

TEST(Frame, GoldenHeaderLayout) {
  Tensor<float> t({1, 1}, {1.0f});
  const auto f = MessageFrame::from_tensor(FrameKind::Gradient, 0x01020304, 7, t);
  const auto bytes = encode_frame(f);
  const std::vector<std::uint8_t> expected{
      36, 0, 0, 0,             // total_len
      'N', 'S', 'F', '1',      // magic
      2, 1, 2, 0,              // kind, dtype, rank, reserved
      4, 3, 2, 1,              // round
      7, 0, 0, 0,              // epoch
      1, 0, 0, 0, 1, 0, 0, 0,  // dims
      0, 0, 0, 0,              // labels_len
      0x00, 0x00, 0x80, 0x3f,  // 1.0f
  };
  EXPECT_EQ(bytes, expected);
}

TEST(Frame, RoundTripWithLabels) {
  const auto f = sample_frame();
  const auto bytes = encode_frame(f);
  EXPECT_EQ(bytes.size(), f.wire_size());
  const auto back = decode_frame(bytes);
  EXPECT_EQ(back, f);
  EXPECT_EQ(back.to_tensor<float>().data, f.to_tensor<float>().data);
}

TEST(Frame, DoublePrecisionIsBitExact) {
  Tensor<double> t({1, 3}, {1.0 / 3.0, -0.0, 1e-300});
  const auto f = MessageFrame::from_tensor(FrameKind::Result, 1, 1, t);
  const auto back = decode_frame(encode_frame(f)).to_tensor<double>();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.data[i]), std::bit_cast<std::uint64_t>(t.data[i]));
  }
}

TEST(Frame, RejectsNonFiniteTensors) {
  Tensor<float> t({1, 2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  EXPECT_THROW(MessageFrame::from_tensor(FrameKind::Activation, 0, 0, t), ProtocolError);
}

TEST(Frame, RejectsMalformedBytes) {
  const auto good = encode_frame(sample_frame());
  auto bad_magic = good;
  bad_magic[4] = 'X';
  EXPECT_THROW(decode_frame(bad_magic), ProtocolError);
  auto bad_kind = good;
  bad_kind[8] = 9;
  EXPECT_THROW(decode_frame(bad_kind), ProtocolError);
  EXPECT_THROW(decode_frame(std::span(good).first(good.size() - 1)), ProtocolError);
  auto bad_len = good;
  bad_len[0] = static_cast<std::uint8_t>(bad_len[0] + 4);
  EXPECT_THROW(decode_frame(bad_len), ProtocolError);
}

TEST(Frame, DtypeMismatchIsProtocolError) {
  const auto f = sample_frame();
  EXPECT_THROW(f.to_tensor<double>(), ProtocolError);
}

TEST(Reassembly, EmitsOnlyCompleteFrames) {
  const auto a = sample_frame();
  auto b = sample_frame();
  b.round = 6;
  auto stream = encode_frame(a);
  const auto second = encode_frame(b);
  stream.insert(stream.end(), second.begin(), second.end());

  for (std::size_t chunk : {1u, 3u, 7u, 50u, 1000u}) {
    ReassemblyBuffer buf;
    std::vector<MessageFrame> out;
    for (std::size_t pos = 0; pos < stream.size(); pos += chunk) {
      const auto n = std::min(chunk, stream.size() - pos);
      auto frames = buf.feed(std::span(stream).subspan(pos, n));
      out.insert(out.end(), frames.begin(), frames.end());
      if (pos + n < encode_frame(a).size()) {
        EXPECT_TRUE(out.empty());
      }
    }
    ASSERT_EQ(out.size(), 2u) << "chunk " << chunk;
    EXPECT_EQ(out[0], a);
    EXPECT_EQ(out[1], b);
    EXPECT_EQ(buf.buffered(), 0u);
  }
}

TEST(Reassembly, KeepsPartialRemainder) {
  const auto bytes = encode_frame(sample_frame());
  ReassemblyBuffer buf;
  EXPECT_TRUE(buf.feed(std::span(bytes).first(3)).empty());
  EXPECT_EQ(buf.expected(), 0u);
  EXPECT_TRUE(buf.feed(std::span(bytes).subspan(3, 10)).empty());
  EXPECT_EQ(buf.expected(), bytes.size());
  EXPECT_EQ(buf.buffered(), 13u);
  EXPECT_EQ(buf.feed(std::span(bytes).subspan(13)).size(), 1u);
}
