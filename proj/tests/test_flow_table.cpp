#include <gtest/gtest.h>

#include "sfcsplit/flow_table.hpp"

using namespace sfcsplit;

namespace {

Address node(int i) { return Address::from_u64(0xfc00000000000000ull, static_cast<std::uint64_t>(i)); }

const std::vector<Sid> kTraversal{node(6), node(7), node(5)};

FiveTuple tuple(int src, int dst, std::uint16_t sport, std::uint16_t dport) {
  return {kProtoTcp, node(src), node(dst), sport, dport};
}

Srv6Packet client_packet(std::uint64_t seq = 0) {
  return encapsulate(make_inner_packet(node(1), node(8), {40001, 9000, seq}, {9, 9, 9}), kTraversal, node(2));
}

FlowValue value_for(int dst) {
  FlowValue v;
  v.outer.src = node(2);
  v.outer.dst = node(dst);
  v.outer.next_header = kProtoRouting;
  v.srh.segments = {node(dst)};
  return v;
}

}  // namespace

TEST(FlowTable, IngressStoresAdvancedHeaders) {
  FlowTable table;
  const auto res = ingress_decap(client_packet(), node(6), table, 0);
  ASSERT_TRUE(res.has_value());
  EXPECT_EQ(res->inner, client_packet().inner);

  const FlowValue* stored = table.peek(tuple(1, 8, 40001, 9000));
  ASSERT_NE(stored, nullptr);
  EXPECT_EQ(stored->srh.segments_left, 1);
  EXPECT_EQ(stored->srh.active_sid(), node(7));
  EXPECT_EQ(stored->outer.dst, node(7));
  EXPECT_EQ(stored->outer.src, node(2));
}

TEST(FlowTable, IngressIgnoresPacketsForOtherSids) {
  FlowTable table;
  EXPECT_FALSE(ingress_decap(client_packet(), node(7), table, 0).has_value());
  EXPECT_EQ(table.size(), 0u);
}

TEST(FlowTable, RekeyedEgressCarriesStoredSrhAndReachesNextSid) {
  FlowTable table;
  const auto ingress = ingress_decap(client_packet(), node(6), table, 0);
  ASSERT_TRUE(ingress.has_value());
  const FiveTuple upstream = tuple(1, 8, 40001, 9000);
  const FiveTuple downstream = tuple(6, 8, 40002, 9000);
  rekey(table, upstream, downstream, 10);
  EXPECT_TRUE(table.aliased(upstream, downstream));

  const auto out_inner = make_inner_packet(node(6), node(8), {40002, 9000, 0}, {1, 2, 3});
  const auto out = egress_encap(out_inner, table, 20);
  ASSERT_TRUE(out.has_value());
  const FlowValue* stored = table.peek(upstream);
  EXPECT_EQ(out->srh, stored->srh);
  EXPECT_EQ(out->outer.src, stored->outer.src);
  EXPECT_EQ(out->outer.dst, node(7));
  EXPECT_EQ(out->inner, out_inner);
  EXPECT_EQ(out->outer.payload_len, out->srh.wire_size() + out_inner.wire_size());

  FlowTable next;
  const auto at_next = ingress_decap(*out, node(7), next, 30);
  ASSERT_TRUE(at_next.has_value());
  EXPECT_EQ(at_next->inner, out_inner);
  EXPECT_EQ(next.peek(downstream)->outer.dst, node(5));
}

TEST(FlowTable, EveryRoundIsInterceptedByNextSid) {
  FlowTable v6;
  FlowTable v7;
  const FiveTuple upstream = tuple(1, 8, 40001, 9000);
  const FiveTuple downstream = tuple(6, 8, 40002, 9000);
  for (std::uint64_t round = 0; round < 5; ++round) {
    const SimTime t = static_cast<SimTime>(round) * kNanosPerSecond;
    ASSERT_TRUE(ingress_decap(client_packet(round * 100), node(6), v6, t).has_value());
    if (round == 0) rekey(v6, upstream, downstream, t);
    const auto out = egress_encap(make_inner_packet(node(6), node(8), {40002, 9000, round * 100}, {7}), v6, t);
    ASSERT_TRUE(out.has_value());
    EXPECT_EQ(out->outer.dst, node(7));
    EXPECT_TRUE(std::holds_alternative<endpoint::Forward>(process_endpoint(*out, node(7))));
    ASSERT_TRUE(ingress_decap(*out, node(7), v7, t).has_value());
  }
  EXPECT_EQ(v6.size(), 2u);
}

TEST(FlowTable, OverwriteIsVisibleThroughAlias) {
  FlowTable table;
  const FiveTuple a = tuple(1, 8, 40001, 9000);
  const FiveTuple b = tuple(6, 8, 40002, 9000);
  table.store(a, value_for(7), 0);
  table.rekey(a, b, 0);
  table.store(a, value_for(9), 1);
  EXPECT_EQ(table.peek(b)->outer.dst, node(9));
  EXPECT_EQ(*table.peek(a), *table.peek(b));
}

TEST(FlowTable, RekeyOfMissingFlowThrows) {
  FlowTable table;
  EXPECT_THROW(table.rekey(tuple(1, 8, 1, 2), tuple(6, 8, 3, 4), 0), MissingFlow);
}

TEST(FlowTable, RekeyIsIdempotent) {
  FlowTable table;
  const FiveTuple a = tuple(1, 8, 40001, 9000);
  const FiveTuple b = tuple(6, 8, 40002, 9000);
  table.store(a, value_for(7), 0);
  table.rekey(a, b, 0);
  table.rekey(a, b, 1);
  EXPECT_EQ(table.size(), 2u);
  EXPECT_TRUE(table.aliased(a, b));
}

TEST(FlowTable, UnknownFlowPassesThrough) {
  FlowTable table;
  const auto pkt = make_inner_packet(node(3), node(4), {1, 2, 0}, {});
  EXPECT_FALSE(egress_encap(pkt, table, 0).has_value());
  EXPECT_FALSE(return_encap(pkt, table, node(5), node(1), 0).has_value());
}

TEST(FlowTable, CapacityEvictsLeastRecentlyUsed) {
  FlowTable table(3);
  for (std::uint16_t p = 1; p <= 3; ++p) table.store(tuple(1, 8, p, 9000), value_for(7), p);
  ASSERT_NE(table.find(tuple(1, 8, 1, 9000), 10), nullptr);
  const auto evicted = table.store(tuple(1, 8, 4, 9000), value_for(7), 11);
  ASSERT_TRUE(evicted.has_value());
  EXPECT_EQ(*evicted, tuple(1, 8, 2, 9000));
  EXPECT_EQ(table.size(), 3u);
  EXPECT_EQ(table.evictions(), 1u);
  EXPECT_EQ(table.peek(tuple(1, 8, 2, 9000)), nullptr);
  EXPECT_NE(table.peek(tuple(1, 8, 1, 9000)), nullptr);
}

TEST(FlowTable, StoreOverwriteDoesNotEvict) {
  FlowTable table(2);
  table.store(tuple(1, 8, 1, 9000), value_for(7), 0);
  table.store(tuple(1, 8, 2, 9000), value_for(7), 0);
  EXPECT_FALSE(table.store(tuple(1, 8, 1, 9000), value_for(9), 1).has_value());
  EXPECT_EQ(table.size(), 2u);
}

TEST(FlowTable, IdleEntriesExpire) {
  FlowTable table(16, 300 * kNanosPerSecond);
  table.store(tuple(1, 8, 1, 9000), value_for(7), 0);
  table.store(tuple(1, 8, 2, 9000), value_for(7), 200 * kNanosPerSecond);
  EXPECT_EQ(table.expire(300 * kNanosPerSecond), 0u);
  EXPECT_EQ(table.expire(301 * kNanosPerSecond), 1u);
  EXPECT_EQ(table.peek(tuple(1, 8, 1, 9000)), nullptr);
  EXPECT_NE(table.peek(tuple(1, 8, 2, 9000)), nullptr);
}

TEST(FlowTable, ReturnEncapReversesStoredSegments) {
  FlowTable v5;
  Srv6Packet pkt = client_packet();
  pkt = std::get<endpoint::Forward>(process_endpoint(pkt, node(6))).packet;
  pkt = std::get<endpoint::Forward>(process_endpoint(pkt, node(7))).packet;
  ASSERT_TRUE(ingress_decap(pkt, node(5), v5, 0).has_value());

  const auto reply = make_inner_packet(node(8), node(1), {9000, 40001, 0}, {4});
  const auto ret = return_encap(reply, v5, node(5), node(1), 0);
  ASSERT_TRUE(ret.has_value());
  EXPECT_EQ(ret->srh.traversal(), (std::vector<Sid>{node(7), node(6), node(1)}));
  EXPECT_EQ(ret->outer.src, node(5));
  EXPECT_EQ(ret->outer.dst, node(7));
}

TEST(FlowTable, DumpIsSortedAndHex) {
  FlowTable table;
  ASSERT_TRUE(ingress_decap(client_packet(), node(6), table, 0).has_value());
  const auto j = table.dump();
  ASSERT_EQ(j.size(), 1u);
  const std::string hex = j.begin().value().get<std::string>();
  EXPECT_EQ(hex.size(), 2 * (8 + 16 * 3));
  EXPECT_EQ(hex.substr(0, 10), "2906040102");
}
