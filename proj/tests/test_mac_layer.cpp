#include "doctest.h"
#include "lorasim/mac_layer.hpp"
#include "lorasim/util.hpp"

using namespace lorasim;
using namespace lorasim::mac;

namespace {

Key key_from(std::uint64_t seed) {
  Key k{};
  util::Rng rng(seed);
  for (int i = 0; i < 16; i += 8) {
    const auto w = rng.next_u64();
    for (int j = 0; j < 8; ++j) k[i + j] = static_cast<std::uint8_t>(w >> (8 * j));
  }
  return k;
}

Session test_session(std::uint64_t eui = 0x1122334455667788ull) {
  auto s = derive_session(eui, key_from(1), 42, 7, 0x26000001);
  return s;
}

}  // namespace

TEST_SUITE("mac_layer") {

TEST_CASE("frame sizes follow the 13-byte overhead identity") {
  auto s = test_session();
  std::vector<std::uint8_t> payload(96, 0xab);
  const auto f96 = build_uplink(s, 1, payload, false, 242);
  CHECK(serialize(f96).size() == 109);
  payload.resize(51);
  const auto f51 = build_uplink(s, 2, payload, false, 51);
  CHECK(serialize(f51).size() == 64);
  payload.clear();
  const auto f0 = build_uplink(s, 1, payload, false, 51);
  CHECK(serialize(f0).size() == 13);
}

TEST_CASE("overhead identity holds for every payload length") {
  auto s = test_session();
  util::Rng rng(9);
  for (int len = 0; len <= 242; ++len) {
    std::vector<std::uint8_t> payload(len);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng.next_u64());
    const auto f = build_uplink(s, 1, payload, rng.uniform01() < 0.5, 242);
    CHECK(serialize(f).size() == static_cast<std::size_t>(len) + 13);
  }
}

TEST_CASE("payload over the data-rate limit is refused") {
  auto s = test_session();
  std::vector<std::uint8_t> payload(52, 0);
  CHECK_THROWS_AS(build_uplink(s, 1, payload, false, 51), PayloadTooLong);
}

TEST_CASE("serialize/parse round trip, all data frame types") {
  auto s = test_session();
  util::Rng rng(14);
  for (auto type : {FrameType::UnconfirmedUp, FrameType::ConfirmedUp,
                    FrameType::UnconfirmedDown, FrameType::ConfirmedDown}) {
    Frame f;
    f.type = type;
    f.dev_addr = static_cast<std::uint32_t>(rng.next_u64());
    f.fctrl = (type == FrameType::UnconfirmedDown) ? kFctrlAck : std::uint8_t{0};
    f.fcnt = static_cast<std::uint16_t>(rng.next_u64());
    f.fport = static_cast<std::uint8_t>(rng.next_u64());
    f.frm_payload.resize(rng.uniform_index(100));
    for (auto& b : f.frm_payload) b = static_cast<std::uint8_t>(rng.next_u64());
    f.mic = expected_mic(f, s.nwk_s_key);
    const auto bytes = serialize(f);
    const auto g = parse_frame(bytes);
    CHECK(g.type == f.type);
    CHECK(g.dev_addr == f.dev_addr);
    CHECK(g.fctrl == f.fctrl);
    CHECK(g.fcnt == f.fcnt);
    CHECK(g.fport == f.fport);
    CHECK(g.frm_payload == f.frm_payload);
    CHECK(g.mic == f.mic);
    CHECK(serialize(g) == bytes);
  }
  CHECK_THROWS_AS(parse_frame(std::vector<std::uint8_t>(12, 0)), FormatError);
}

TEST_CASE("payload encryption round trips and needs the right key") {
  auto s = test_session();
  std::vector<std::uint8_t> payload(80);
  util::Rng rng(7);
  for (auto& b : payload) b = static_cast<std::uint8_t>(rng.next_u64());
  const auto f = build_uplink(s, 1, payload, false, 242);
  CHECK(f.frm_payload != payload);  // on-the-wire form is scrambled
  CHECK(decrypt_payload(s, f) == payload);
  Session wrong = s;
  wrong.app_s_key = key_from(99);
  CHECK(decrypt_payload(wrong, f) != payload);
}

TEST_CASE("mic verifies and any single bit flip breaks it") {
  auto s = test_session();
  std::vector<std::uint8_t> payload(24, 0x5a);
  const auto f = build_uplink(s, 1, payload, true, 51);
  CHECK(verify_mic(f, s.nwk_s_key));
  const auto bytes = serialize(f);
  for (std::size_t byte = 0; byte < bytes.size(); ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      auto corrupted = bytes;
      corrupted[byte] ^= static_cast<std::uint8_t>(1u << bit);
      const auto g = parse_frame(corrupted);
      CHECK_FALSE(verify_mic(g, s.nwk_s_key));
    }
  }
}

TEST_CASE("mic is key sensitive") {
  auto s = test_session();
  const auto f = build_uplink(s, 1, std::vector<std::uint8_t>(16, 1), false, 51);
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    CHECK_FALSE(verify_mic(f, key_from(seed)));
  }
}

TEST_CASE("keyed transform avalanche") {
  const auto key = key_from(3);
  Block in{};
  const auto base = keyed_transform(key, in);
  for (int bit = 0; bit < 128; ++bit) {
    Block flipped = in;
    flipped[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    const auto out = keyed_transform(key, flipped);
    int differing = 0;
    for (int i = 0; i < 16; ++i) {
      differing += __builtin_popcount(static_cast<unsigned>(out[i] ^ base[i]));
    }
    CHECK(differing > 32);  // strong mixing, not a formal bound
  }
}

TEST_CASE("join derivation: fresh nonces give fresh sessions") {
  const auto app_key = key_from(5);
  const auto a = derive_session(1, app_key, 1, 1, 0x26000001);
  const auto b = derive_session(1, app_key, 2, 2, 0x26000002);
  CHECK(a.nwk_s_key != b.nwk_s_key);
  CHECK(a.app_s_key != b.app_s_key);
  CHECK(a.nwk_s_key != a.app_s_key);
  CHECK(a.nwk_s_key != app_key);
  CHECK(a.app_s_key != app_key);
  // same inputs: same session (what ABP relies on)
  const auto c = derive_session(1, app_key, 1, 1, 0x26000001);
  CHECK(c.nwk_s_key == a.nwk_s_key);
  CHECK(c.app_s_key == a.app_s_key);
}

TEST_CASE("join frames round trip with their tags") {
  const auto app_key = key_from(6);
  JoinRequest jr;
  jr.app_eui = 0x70b3d57ed0000000ull;
  jr.dev_eui = 0x0004a30b001c0530ull;
  jr.dev_nonce = 0x1234;
  const auto bytes = serialize(jr, app_key);
  CHECK(bytes.size() == kJoinRequestSize);
  auto parsed = parse_join_request(bytes);
  CHECK(parsed.dev_eui == jr.dev_eui);
  CHECK(parsed.dev_nonce == jr.dev_nonce);
  CHECK(verify_join_request(parsed, app_key));
  parsed.dev_nonce ^= 1;
  CHECK_FALSE(verify_join_request(parsed, app_key));

  JoinAccept ja;
  ja.join_nonce = 77;
  ja.dev_addr = 0x26000009;
  const auto accept_bytes = serialize(ja, app_key);
  CHECK(accept_bytes.size() == kJoinAcceptSize);
  const auto pa = parse_join_accept(accept_bytes);
  CHECK(pa.dev_addr == ja.dev_addr);
  CHECK(verify_join_accept(pa, app_key));
}

TEST_CASE("uplink counter strictly increases") {
  auto s = test_session();
  std::uint16_t prev = s.fcnt_up;
  for (int i = 0; i < 50; ++i) {
    const auto f = build_uplink(s, 1, std::vector<std::uint8_t>{1, 2, 3}, false, 51);
    if (i > 0) CHECK(f.fcnt == prev + 1);
    prev = f.fcnt;
  }
}

TEST_CASE("class A receive windows") {
  const auto w = rx_windows_after(Microseconds(10'000'000), 868100000, 5);
  CHECK(w.rx1_open == Microseconds(11'000'000));
  CHECK(w.rx2_open == Microseconds(12'000'000));
  CHECK(w.rx1_open < w.rx2_open);

  // inside RX1: matching channel and rate
  CHECK(class_a_receives(w, {w.rx1_open, 868100000, 5}));
  // inside RX2: the fixed channel at DR0
  CHECK(class_a_receives(w, {w.rx2_open, 869525000, 0}));
  // between the windows: missed
  CHECK_FALSE(class_a_receives(w, {Microseconds(11'500'000), 868100000, 5}));
  // 10 s after the uplink: missed
  CHECK_FALSE(class_a_receives(w, {Microseconds(20'000'000), 869525000, 0}));
  // right window instant, wrong channel
  CHECK_FALSE(class_a_receives(w, {w.rx1_open, 868300000, 5}));
}

TEST_CASE("class C receives whenever not transmitting") {
  CHECK(class_c_receives({Microseconds(123'456'789), 869525000, 0}, false));
  CHECK_FALSE(class_c_receives({Microseconds(123'456'789), 869525000, 0}, true));
  CHECK_FALSE(class_c_receives({Microseconds(1), 868100000, 0}, false));  // not rx2
}

TEST_CASE("class B ping slots") {
  const auto offsets = ping_slot_offsets(8);
  REQUIRE(offsets.size() == 8);
  for (std::size_t i = 1; i < offsets.size(); ++i) CHECK(offsets[i] > offsets[i - 1]);
  CHECK(offsets.back() < kBeaconPeriod);

  ClassBState st;
  st.beacon_lock = true;
  st.last_beacon = Microseconds(0);
  st.slots_per_beacon = 8;
  const auto w = rx_windows_after(Microseconds(0), 868100000, 5);
  CHECK(class_b_receives(st, w, {offsets[2], 869525000, 0}));
  CHECK_FALSE(class_b_receives(st, w, {offsets[2] + Microseconds(1), 869525000, 0}));
  // repeats every beacon period
  CHECK(class_b_receives(st, w, {offsets[0] + kBeaconPeriod, 869525000, 0}));
  // without the lock the device degrades to class A behavior
  st.beacon_lock = false;
  CHECK_FALSE(class_b_receives(st, w, {offsets[2], 869525000, 0}));
  CHECK(class_b_receives(st, w, {w.rx2_open, 869525000, 0}));

  st.beacon_lock = true;
  const auto next = next_ping_slot(st, offsets[1] + Microseconds(1));
  CHECK(next == offsets[2]);
}

TEST_CASE("channel lifecycle around the join") {
  CHECK(pre_join_channels().size() == 3);
  CHECK(post_join_channels().size() == 8);
  for (const auto& c : pre_join_channels()) CHECK(c.mandatory);
}

}  // TEST_SUITE
