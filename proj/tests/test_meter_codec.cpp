#include "doctest.h"
#include "lorasim/meter_codec.hpp"
#include "lorasim/util.hpp"

#include <algorithm>
#include <fstream>

using namespace lorasim;
using namespace lorasim::meter;

namespace {

MeterDatagram random_record(util::Rng& rng) {
  MeterDatagram d;
  d.meter_id = rng.next_u64();
  d.datagram_seq = static_cast<std::uint32_t>(rng.next_u64());
  d.timestamp_s = static_cast<std::uint32_t>(rng.next_u64());
  d.meter_type = static_cast<MeterType>(rng.uniform_index(3));
  d.status_flags = static_cast<std::uint8_t>(rng.next_u64());
  for (auto& r : d.readings) r = static_cast<std::int32_t>(rng.next_u64());
  return d;
}

std::array<std::uint8_t, kDatagramSize> random_bytes(util::Rng& rng) {
  std::array<std::uint8_t, kDatagramSize> b{};
  for (auto& x : b) x = static_cast<std::uint8_t>(rng.next_u64());
  return b;
}

std::string fixture_path(const char* name) {
  const char* src = std::getenv("LORASIM_SRC");
  if (src && *src) return std::string(src) + "/tests/data/" + name;
  return std::string("tests/data/") + name;
}

}  // namespace

TEST_SUITE("meter_codec") {

TEST_CASE("encode is 96 bytes, all-zero record stays mostly zero") {
  MeterDatagram zero{};
  const auto bytes = encode(zero);
  CHECK(bytes.size() == 96);
  for (auto b : bytes) CHECK(b == 0);
  util::Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    CHECK(encode(random_record(rng)).size() == 96);
  }
}

TEST_CASE("encode/decode round trip") {
  util::Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto d = random_record(rng);
    const auto e = encode(d);
    const auto g = decode(e);
    CHECK(g.meter_id == d.meter_id);
    CHECK(g.datagram_seq == d.datagram_seq);
    CHECK(g.timestamp_s == d.timestamp_s);
    CHECK(g.meter_type == d.meter_type);
    CHECK(g.status_flags == d.status_flags);
    CHECK(g.readings == d.readings);
    CHECK(encode(g) == e);
  }
}

TEST_CASE("decode enforces format") {
  std::vector<std::uint8_t> bad(95, 0);
  CHECK_THROWS_AS(decode(bad), CodecError);
  std::array<std::uint8_t, 96> nonzero_reserved{};
  nonzero_reserved[95] = 1;
  CHECK_THROWS_AS(decode(nonzero_reserved), CodecError);
  std::array<std::uint8_t, 96> bad_type{};
  bad_type[16] = 3;
  CHECK_THROWS_AS(decode(bad_type), CodecError);
}

TEST_CASE("golden wire image") {
  // Frozen fixture: a canonical record and its byte-exact encoding.
  MeterDatagram d;
  d.meter_id = 0x0004a30b001c0530ull;
  d.datagram_seq = 0x00010203;
  d.timestamp_s = 1700000000;  // 0x6553f100
  d.meter_type = MeterType::Gas;
  d.status_flags = 0x05;
  for (int i = 0; i < kReadingCount; ++i) d.readings[i] = 1000 * (i + 1);
  const auto bytes = encode(d);

  std::ifstream fx(fixture_path("meter_datagram.hex"));
  REQUIRE(fx.good());
  std::string hex;
  fx >> hex;
  CHECK(util::to_hex(bytes) == hex);
}

TEST_CASE("fragments carry the split datagram") {
  util::Rng rng(4);
  const auto bytes = random_bytes(rng);
  const auto frags = make_fragments(0xdeadbeef, bytes);
  CHECK(frags[0].datagram_id == 0xbeef);  // low 16 bits of the sequence
  CHECK(frags[1].datagram_id == 0xbeef);
  CHECK(frags[0].index == 0);
  CHECK(frags[1].index == 1);
  const auto w0 = serialize(frags[0]);
  const auto w1 = serialize(frags[1]);
  CHECK(w0.size() == 51);
  CHECK(w1.size() == 51);
  CHECK(w0[2] == 0x02);  // index 0, count 2
  CHECK(w1[2] == 0x12);  // index 1, count 2
  CHECK(std::equal(w0.begin() + 3, w0.end(), bytes.begin()));
  CHECK(std::equal(w1.begin() + 3, w1.end(), bytes.begin() + 48));
  CHECK_THROWS_AS(make_fragments(1, std::vector<std::uint8_t>(95, 0)), CodecError);
}

TEST_CASE("fragment parser validates the header") {
  util::Rng rng(5);
  const auto frags = make_fragments(7, random_bytes(rng));
  auto wire = serialize(frags[0]);
  const auto parsed = parse_fragment(wire);
  CHECK(parsed.index == 0);
  CHECK(parsed.count == 2);
  CHECK(parsed.data == frags[0].data);
  wire[2] = 0x22;  // index 2 of 2
  CHECK_THROWS_AS(parse_fragment(wire), CodecError);
  wire[2] = 0x00;  // count 0
  CHECK_THROWS_AS(parse_fragment(wire), CodecError);
  CHECK_THROWS_AS(parse_fragment(std::vector<std::uint8_t>(50, 0)), CodecError);
}

TEST_CASE("reassembly round trip, both arrival orders, many datagrams") {
  util::Rng rng(6);
  Reassembler reasm;
  for (int i = 0; i < 10000; ++i) {
    const auto bytes = random_bytes(rng);
    auto frags = make_fragments(static_cast<std::uint32_t>(i), bytes);
    const bool swap = rng.uniform01() < 0.5;
    const auto& first = swap ? frags[1] : frags[0];
    const auto& second = swap ? frags[0] : frags[1];
    const auto now = Microseconds(i * 1000LL);
    CHECK_FALSE(reasm.add(first, now).has_value());
    const auto whole = reasm.add(second, now + Microseconds(1));
    REQUIRE(whole.has_value());
    CHECK(std::equal(whole->begin(), whole->end(), bytes.begin()));
  }
  CHECK(reasm.pending_count() == 0);
}

TEST_CASE("interleaved datagrams never mix") {
  util::Rng rng(7);
  Reassembler reasm;
  const auto bytes_a = random_bytes(rng);
  const auto bytes_b = random_bytes(rng);
  const auto fa = make_fragments(1, bytes_a);
  const auto fb = make_fragments(2, bytes_b);
  CHECK_FALSE(reasm.add(fa[0], Microseconds(0)).has_value());
  CHECK_FALSE(reasm.add(fb[1], Microseconds(1)).has_value());
  const auto whole_b = reasm.add(fb[0], Microseconds(2));
  REQUIRE(whole_b.has_value());
  CHECK(std::equal(whole_b->begin(), whole_b->end(), bytes_b.begin()));
  const auto whole_a = reasm.add(fa[1], Microseconds(3));
  REQUIRE(whole_a.has_value());
  CHECK(std::equal(whole_a->begin(), whole_a->end(), bytes_a.begin()));
}

TEST_CASE("duplicate fragments: benign when identical, error when conflicting") {
  util::Rng rng(8);
  Reassembler reasm;
  const auto frags = make_fragments(9, random_bytes(rng));
  CHECK_FALSE(reasm.add(frags[0], Microseconds(0)).has_value());
  CHECK_FALSE(reasm.add(frags[0], Microseconds(1)).has_value());  // same data again
  auto conflicting = frags[0];
  conflicting.data[10] ^= 0xff;
  CHECK_THROWS_AS(reasm.add(conflicting, Microseconds(2)), IntegrityError);
}

TEST_CASE("mixed counts within one datagram id are rejected") {
  Reassembler reasm;
  Fragment f;
  f.datagram_id = 4;
  f.index = 0;
  f.count = 2;
  CHECK_FALSE(reasm.add(f, Microseconds(0)).has_value());
  Fragment g = f;
  g.index = 1;
  g.count = 3;
  CHECK_THROWS_AS(reasm.add(g, Microseconds(1)), CodecError);
}

TEST_CASE("stale partials expire after the timeout") {
  Reassembler reasm(Microseconds(600'000'000));  // 10 min
  util::Rng rng(10);
  const auto frags = make_fragments(11, random_bytes(rng));
  CHECK_FALSE(reasm.add(frags[0], Microseconds(0)).has_value());
  CHECK(reasm.expire_stale(Microseconds(599'999'999)).empty());
  const auto expired = reasm.expire_stale(Microseconds(600'000'000));
  REQUIRE(expired.size() == 1);
  CHECK(expired[0] == 11);
  CHECK(reasm.pending_count() == 0);
  // the late second fragment now starts a fresh partial instead of completing
  CHECK_FALSE(reasm.add(frags[1], Microseconds(600'000'001)).has_value());
}

}  // TEST_SUITE
