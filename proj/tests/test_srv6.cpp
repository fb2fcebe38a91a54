#include <gtest/gtest.h>

#include <random>

#include "sfcsplit/srv6.hpp"

using namespace sfcsplit;

namespace {

Address node(int i) { return Address::from_u64(0xfc00000000000000ull, static_cast<std::uint64_t>(i)); }

InnerPacket client_packet() {
  return make_inner_packet(node(1), node(8), {40001, 9000, 0}, {1, 2, 3, 4, 5});
}

Srh random_srh(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> m_dist(1, 20);
  std::uniform_int_distribution<std::uint64_t> word;
  const int m = m_dist(rng);
  Srh s;
  s.next_header = static_cast<std::uint8_t>(word(rng));
  s.last_entry = static_cast<std::uint8_t>(m - 1);
  s.segments_left = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, m - 1)(rng));
  for (int i = 0; i < m; ++i) s.segments.push_back(Address::from_u64(word(rng), word(rng)));
  return s;
}

}  // namespace

TEST(SrhCodec, GoldenThreeSegmentLayout) {
  Srh s;
  s.segments_left = 2;
  s.last_entry = 2;
  s.segments = {node(5), node(7), node(6)};

  std::vector<std::uint8_t> expected{41, 6, 4, 2, 2, 0, 0, 0};
  for (int id : {5, 7, 6}) {
    const std::uint8_t prefix[8] = {0xfc, 0, 0, 0, 0, 0, 0, 0};
    expected.insert(expected.end(), prefix, prefix + 8);
    for (int i = 0; i < 7; ++i) expected.push_back(0);
    expected.push_back(static_cast<std::uint8_t>(id));
  }

  const auto bytes = encode_srh(s);
  ASSERT_EQ(bytes.size(), 56u);
  EXPECT_EQ(bytes[1], 6);
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(decode_srh(bytes), s);
}

TEST(SrhCodec, SingleSegmentIsMinimal) {
  Srh s;
  s.segments = {node(5)};
  const auto bytes = encode_srh(s);
  EXPECT_EQ(bytes.size(), 24u);
  EXPECT_EQ(bytes[1], 2);
  EXPECT_EQ(bytes[4], 0);
}

TEST(SrhCodec, TagIsBigEndian) {
  Srh s;
  s.segments = {node(5)};
  s.tag = 0x1234;
  const auto bytes = encode_srh(s);
  EXPECT_EQ(bytes[6], 0x12);
  EXPECT_EQ(bytes[7], 0x34);
}

TEST(SrhCodec, RandomRoundTrip) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const Srh s = random_srh(rng);
    const auto bytes = encode_srh(s);
    ASSERT_EQ(bytes.size(), 8u + 16u * s.segments.size());
    ASSERT_EQ(bytes[1], 2 * s.segments.size());
    const Srh back = decode_srh(bytes);
    ASSERT_EQ(back, s);
    ASSERT_EQ(encode_srh(back), bytes);
  }
}

TEST(SrhCodec, EncodeRejectsEmptyAndOversizedLists) {
  Srh empty;
  EXPECT_THROW(encode_srh(empty), InvalidSrh);
  Srh big;
  big.segments.assign(256, node(1));
  big.last_entry = 255;
  EXPECT_THROW(encode_srh(big), InvalidSrh);
}

TEST(SrhCodec, DecodeRejectsMalformedInput) {
  Srh s;
  s.segments_left = 2;
  s.last_entry = 2;
  s.segments = {node(5), node(7), node(6)};
  const auto good = encode_srh(s);

  auto bad_type = good;
  bad_type[2] = 3;
  EXPECT_THROW(decode_srh(bad_type), MalformedSrh);

  auto odd_len = good;
  odd_len[1] = 5;
  EXPECT_THROW(decode_srh(odd_len), MalformedSrh);

  auto wrong_last = good;
  wrong_last[4] = 1;
  EXPECT_THROW(decode_srh(wrong_last), MalformedSrh);

  auto sl_too_big = good;
  sl_too_big[3] = 3;
  EXPECT_THROW(decode_srh(sl_too_big), MalformedSrh);

  EXPECT_THROW(decode_srh(std::span(good).first(7)), MalformedSrh);
  EXPECT_THROW(decode_srh(std::span(good).first(40)), MalformedSrh);
}

TEST(Encapsulate, ReversesTraversalIntoSegmentList) {
  const std::vector<Sid> traversal{node(6), node(7), node(5)};
  const auto pkt = encapsulate(client_packet(), traversal, node(2));
  EXPECT_EQ(pkt.srh.segments, (std::vector<Sid>{node(5), node(7), node(6)}));
  EXPECT_EQ(pkt.srh.segments_left, 2);
  EXPECT_EQ(pkt.outer.dst, node(6));
  EXPECT_EQ(pkt.outer.src, node(2));
  EXPECT_EQ(pkt.outer.next_header, kProtoRouting);
  EXPECT_EQ(pkt.outer.payload_len, pkt.srh.wire_size() + pkt.inner.wire_size());
  EXPECT_EQ(pkt.inner, client_packet());
  EXPECT_EQ(pkt.srh.traversal(), traversal);
}

TEST(Encapsulate, SingleSegment) {
  const std::vector<Sid> traversal{node(5)};
  const auto pkt = encapsulate(client_packet(), traversal, node(2));
  EXPECT_EQ(pkt.srh.segments_left, 0);
  EXPECT_EQ(pkt.outer.dst, node(5));
}

TEST(Encapsulate, EmptyTraversalThrows) {
  EXPECT_THROW(encapsulate(client_packet(), std::vector<Sid>{}, node(2)), InvalidSrh);
}

TEST(ProcessEndpoint, ForwardDecrementsSegmentsLeft) {
  const std::vector<Sid> traversal{node(6), node(7), node(5)};
  const auto pkt = encapsulate(client_packet(), traversal, node(2));
  const auto action = process_endpoint(pkt, node(6));
  const auto* fwd = std::get_if<endpoint::Forward>(&action);
  ASSERT_NE(fwd, nullptr);
  EXPECT_EQ(fwd->packet.srh.segments_left, 1);
  EXPECT_EQ(fwd->packet.outer.dst, node(7));
  EXPECT_EQ(fwd->packet.inner, pkt.inner);
}

TEST(ProcessEndpoint, LastSegmentDecapsulates) {
  const std::vector<Sid> traversal{node(5)};
  const auto pkt = encapsulate(client_packet(), traversal, node(2));
  const auto action = process_endpoint(pkt, node(5));
  const auto* dec = std::get_if<endpoint::DecapForward>(&action);
  ASSERT_NE(dec, nullptr);
  EXPECT_EQ(dec->inner, client_packet());
}

TEST(ProcessEndpoint, TransitNodeIsNotAddressed) {
  const std::vector<Sid> traversal{node(6), node(7), node(5)};
  const auto pkt = encapsulate(client_packet(), traversal, node(2));
  EXPECT_TRUE(std::holds_alternative<endpoint::NotMine>(process_endpoint(pkt, node(3))));
}

TEST(ProcessEndpoint, PathLawVisitsTraversalInOrder) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = std::uniform_int_distribution<int>(1, 12)(rng);
    std::vector<Sid> traversal;
    for (int i = 0; i < m; ++i) traversal.push_back(node(100 + trial * 20 + i));
    Srv6Packet pkt = encapsulate(client_packet(), traversal, node(2));
    std::vector<Sid> visits;
    for (int step = 0; step <= m; ++step) {
      const Sid here = pkt.outer.dst;
      visits.push_back(here);
      auto action = process_endpoint(pkt, here);
      if (auto* dec = std::get_if<endpoint::DecapForward>(&action)) {
        EXPECT_EQ(dec->inner, client_packet());
        break;
      }
      pkt = std::get<endpoint::Forward>(action).packet;
    }
    ASSERT_EQ(visits, traversal);
  }
}

TEST(ReverseSrh, ReturnTraversalVisitsEndpointsBackwards) {
  const std::vector<Sid> traversal{node(6), node(7), node(5)};
  const auto fwd = encapsulate(client_packet(), traversal, node(2)).srh;
  const Srh ret = reverse_srh(fwd, node(1));
  EXPECT_EQ(ret.traversal(), (std::vector<Sid>{node(7), node(6), node(1)}));
  EXPECT_EQ(ret.segments_left, 2);
  EXPECT_EQ(ret.last_entry, 2);
}

TEST(ReverseSrh, DetourIsReversed) {
  const std::vector<Sid> traversal{node(6), node(9), node(10), node(7), node(5)};
  const auto fwd = encapsulate(client_packet(), traversal, node(2)).srh;
  EXPECT_EQ(reverse_srh(fwd, node(1)).traversal(),
            (std::vector<Sid>{node(7), node(10), node(9), node(6), node(1)}));
}

TEST(ReverseSrh, SingleSegmentIsPalindrome) {
  const std::vector<Sid> traversal{node(5)};
  const auto fwd = encapsulate(client_packet(), traversal, node(2)).srh;
  const auto ret = reverse_srh(fwd, node(5));
  EXPECT_EQ(ret.segments, fwd.segments);
}

TEST(ReverseSrh, InvolutionPreservesTraversal) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int m = std::uniform_int_distribution<int>(1, 16)(rng);
    std::vector<Sid> traversal;
    for (int i = 0; i < m; ++i) traversal.push_back(node(1000 + trial * 20 + i));
    const auto fwd = encapsulate(client_packet(), traversal, node(2)).srh;
    const auto twice = reverse_srh(reverse_srh(fwd, node(1)), traversal.back());
    EXPECT_EQ(twice.traversal(), fwd.traversal());
  }
}

TEST(FiveTuple, ExtractedFromInnerHeaders) {
  const auto t = five_tuple_of(client_packet());
  EXPECT_EQ(t.protocol, 6);
  EXPECT_EQ(t.src_addr, node(1));
  EXPECT_EQ(t.dst_addr, node(8));
  EXPECT_EQ(t.src_port, 40001);
  EXPECT_EQ(t.dst_port, 9000);
}

TEST(FiveTuple, StreamPacketsShareTuple) {
  const auto a = make_inner_packet(node(1), node(8), {40001, 9000, 0}, {1});
  const auto b = make_inner_packet(node(1), node(8), {40001, 9000, 8940}, {2, 3});
  EXPECT_EQ(five_tuple_of(a), five_tuple_of(b));
}

TEST(FiveTuple, DirectionMatters) {
  const auto fwd = make_inner_packet(node(1), node(8), {40001, 9000, 0}, {});
  const auto rev = make_inner_packet(node(8), node(1), {9000, 40001, 0}, {});
  EXPECT_NE(five_tuple_of(fwd), five_tuple_of(rev));
  EXPECT_EQ(five_tuple_of(fwd).reversed(), five_tuple_of(rev));
}

TEST(Address, ParsesAndPrintsIpv6Text) {
  const auto a = Address::parse("fc00::6");
  EXPECT_EQ(a, node(6));
  EXPECT_EQ(a.to_string(), "fc00::6");
  EXPECT_THROW(Address::parse("not-an-address"), std::invalid_argument);
}
