#include "lorasim/mac_layer.hpp"

#include <algorithm>
#include <cstring>

namespace lorasim::mac {

namespace {

std::uint64_t load_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

void store_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) {
    p[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
  put_u32(out, static_cast<std::uint32_t>(v));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((std::uint16_t(p[0]) << 8) | p[1]);
}

}  // namespace

Block keyed_transform(const Key& key, const Block& in) {
  const std::uint64_t k0 = load_u64(key.data());
  const std::uint64_t k1 = load_u64(key.data() + 8);
  std::uint64_t b0 = load_u64(in.data());
  std::uint64_t b1 = load_u64(in.data() + 8);
  for (int round = 0; round < 8; ++round) {
    const std::uint64_t rc = 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(round + 1);
    b0 += mix64(b1 ^ k0 ^ rc);
    b1 += mix64(b0 ^ k1 ^ (rc << 1 | 1));
  }
  Block out;
  store_u64(out.data(), b0);
  store_u64(out.data() + 8, b1);
  return out;
}

std::uint32_t compute_tag(const Key& key, std::span<const std::uint8_t> data) {
  // Length-prefixed CBC of the keyed transform; the prefix block keeps
  // messages of different lengths from sharing a tag chain.
  Block state{};
  store_u64(state.data(), 0x6c6f7261u);  // domain constant
  store_u64(state.data() + 8, static_cast<std::uint64_t>(data.size()));
  state = keyed_transform(key, state);
  for (std::size_t offset = 0; offset < data.size(); offset += 16) {
    const std::size_t n = std::min<std::size_t>(16, data.size() - offset);
    for (std::size_t i = 0; i < n; ++i) state[i] ^= data[offset + i];
    state = keyed_transform(key, state);
  }
  return read_u32(state.data());
}

void crypt_payload(const Key& key, std::uint32_t dev_addr, std::uint16_t fcnt,
                   bool downlink, std::span<std::uint8_t> payload) {
  for (std::size_t offset = 0, block_idx = 0; offset < payload.size();
       offset += 16, ++block_idx) {
    Block nonce{};
    nonce[0] = downlink ? 0x01 : 0x00;
    nonce[1] = static_cast<std::uint8_t>(dev_addr >> 24);
    nonce[2] = static_cast<std::uint8_t>(dev_addr >> 16);
    nonce[3] = static_cast<std::uint8_t>(dev_addr >> 8);
    nonce[4] = static_cast<std::uint8_t>(dev_addr);
    nonce[5] = static_cast<std::uint8_t>(fcnt >> 8);
    nonce[6] = static_cast<std::uint8_t>(fcnt);
    nonce[7] = static_cast<std::uint8_t>(block_idx);
    const Block ks = keyed_transform(key, nonce);
    const std::size_t n = std::min<std::size_t>(16, payload.size() - offset);
    for (std::size_t i = 0; i < n; ++i) payload[offset + i] ^= ks[i];
  }
}

std::uint8_t mhdr_byte(FrameType t) {
  switch (t) {
    case FrameType::JoinRequest: return 0x00;
    case FrameType::JoinAccept: return 0x20;
    case FrameType::UnconfirmedUp: return 0x40;
    case FrameType::UnconfirmedDown: return 0x60;
    case FrameType::ConfirmedUp: return 0x80;
    case FrameType::ConfirmedDown: return 0xa0;
  }
  throw FormatError("bad frame type");
}

FrameType frame_type_from_mhdr(std::uint8_t mhdr) {
  switch (mhdr & 0xe0) {
    case 0x00: return FrameType::JoinRequest;
    case 0x20: return FrameType::JoinAccept;
    case 0x40: return FrameType::UnconfirmedUp;
    case 0x60: return FrameType::UnconfirmedDown;
    case 0x80: return FrameType::ConfirmedUp;
    case 0xa0: return FrameType::ConfirmedDown;
    default: throw FormatError("unknown mhdr frame type");
  }
}

bool is_uplink(FrameType t) {
  return t == FrameType::JoinRequest || t == FrameType::UnconfirmedUp ||
         t == FrameType::ConfirmedUp;
}

bool is_data(FrameType t) {
  return t == FrameType::UnconfirmedUp || t == FrameType::ConfirmedUp ||
         t == FrameType::UnconfirmedDown || t == FrameType::ConfirmedDown;
}

namespace {

std::vector<std::uint8_t> serialize_without_mic(const Frame& f) {
  std::vector<std::uint8_t> out;
  out.reserve(kFrameOverhead + f.frm_payload.size());
  out.push_back(mhdr_byte(f.type));
  put_u32(out, f.dev_addr);
  out.push_back(f.fctrl);
  put_u16(out, f.fcnt);
  out.push_back(f.fport);
  out.insert(out.end(), f.frm_payload.begin(), f.frm_payload.end());
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize(const Frame& f) {
  auto out = serialize_without_mic(f);
  put_u32(out, f.mic);
  return out;
}

Frame parse_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < static_cast<std::size_t>(kFrameOverhead)) {
    throw FormatError("frame shorter than the 13-byte overhead");
  }
  Frame f;
  f.type = frame_type_from_mhdr(bytes[0]);
  if (!is_data(f.type)) throw FormatError("not a data frame");
  f.dev_addr = read_u32(bytes.data() + 1);
  f.fctrl = bytes[5];
  f.fcnt = read_u16(bytes.data() + 6);
  f.fport = bytes[8];
  f.frm_payload.assign(bytes.begin() + 9, bytes.end() - 4);
  f.mic = read_u32(bytes.data() + bytes.size() - 4);
  return f;
}

std::uint32_t expected_mic(const Frame& f, const Key& nwk_s_key) {
  return compute_tag(nwk_s_key, serialize_without_mic(f));
}

bool verify_mic(const Frame& f, const Key& nwk_s_key) {
  return expected_mic(f, nwk_s_key) == f.mic;
}

std::vector<std::uint8_t> serialize(const JoinRequest& j, const Key& app_key) {
  std::vector<std::uint8_t> out;
  out.reserve(kJoinRequestSize);
  out.push_back(mhdr_byte(FrameType::JoinRequest));
  put_u64(out, j.app_eui);
  put_u64(out, j.dev_eui);
  put_u16(out, j.dev_nonce);
  put_u32(out, compute_tag(app_key, out));
  return out;
}

JoinRequest parse_join_request(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kJoinRequestSize || frame_type_from_mhdr(bytes[0]) != FrameType::JoinRequest) {
    throw FormatError("not a join request");
  }
  JoinRequest j;
  j.app_eui = load_u64(bytes.data() + 1);
  j.dev_eui = load_u64(bytes.data() + 9);
  j.dev_nonce = read_u16(bytes.data() + 17);
  j.mic = read_u32(bytes.data() + 19);
  return j;
}

bool verify_join_request(const JoinRequest& j, const Key& app_key) {
  auto bytes = serialize(j, app_key);
  return read_u32(bytes.data() + 19) == j.mic;
}

std::vector<std::uint8_t> serialize(const JoinAccept& j, const Key& app_key) {
  std::vector<std::uint8_t> out;
  out.reserve(kJoinAcceptSize);
  out.push_back(mhdr_byte(FrameType::JoinAccept));
  put_u32(out, j.join_nonce);
  put_u32(out, j.dev_addr);
  // rx parameter block: rx1 delay 1 s, rx2 at DR0, one reserved byte
  out.push_back(0x01);
  out.push_back(0x00);
  out.push_back(0x00);
  out.push_back(0x00);
  put_u32(out, compute_tag(app_key, out));
  return out;
}

JoinAccept parse_join_accept(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kJoinAcceptSize || frame_type_from_mhdr(bytes[0]) != FrameType::JoinAccept) {
    throw FormatError("not a join accept");
  }
  JoinAccept j;
  j.join_nonce = read_u32(bytes.data() + 1);
  j.dev_addr = read_u32(bytes.data() + 5);
  j.mic = read_u32(bytes.data() + 13);
  return j;
}

bool verify_join_accept(const JoinAccept& j, const Key& app_key) {
  auto bytes = serialize(j, app_key);
  return read_u32(bytes.data() + 13) == j.mic;
}

Session derive_session(std::uint64_t dev_eui, const Key& app_key,
                       std::uint32_t join_nonce, std::uint16_t dev_nonce,
                       std::uint32_t dev_addr) {
  auto derive = [&](std::uint8_t label) {
    Block in{};
    in[0] = label;
    in[1] = static_cast<std::uint8_t>(join_nonce >> 24);
    in[2] = static_cast<std::uint8_t>(join_nonce >> 16);
    in[3] = static_cast<std::uint8_t>(join_nonce >> 8);
    in[4] = static_cast<std::uint8_t>(join_nonce);
    in[5] = static_cast<std::uint8_t>(dev_nonce >> 8);
    in[6] = static_cast<std::uint8_t>(dev_nonce);
    store_u64(in.data() + 7, dev_eui);
    return keyed_transform(app_key, in);
  };
  Session s;
  s.dev_eui = dev_eui;
  s.dev_addr = dev_addr;
  s.nwk_s_key = derive(0x01);
  s.app_s_key = derive(0x02);
  s.activation = Activation::Otaa;
  return s;
}

Frame build_uplink(Session& s, std::uint8_t fport, std::span<const std::uint8_t> payload,
                   bool confirmed, int max_payload) {
  if (static_cast<int>(payload.size()) > max_payload) {
    throw PayloadTooLong("payload of " + std::to_string(payload.size()) +
                         " bytes exceeds the data-rate limit of " +
                         std::to_string(max_payload));
  }
  Frame f;
  f.type = confirmed ? FrameType::ConfirmedUp : FrameType::UnconfirmedUp;
  f.dev_addr = s.dev_addr;
  f.fcnt = s.fcnt_up++;
  f.fport = fport;
  f.frm_payload.assign(payload.begin(), payload.end());
  crypt_payload(s.app_s_key, f.dev_addr, f.fcnt, false, f.frm_payload);
  f.mic = expected_mic(f, s.nwk_s_key);
  return f;
}

Frame build_ack_downlink(Session& s) {
  Frame f;
  f.type = FrameType::UnconfirmedDown;
  f.dev_addr = s.dev_addr;
  f.fctrl = kFctrlAck;
  f.fcnt = s.fcnt_down++;
  f.fport = 0;
  f.mic = expected_mic(f, s.nwk_s_key);
  return f;
}

std::vector<std::uint8_t> decrypt_payload(const Session& s, const Frame& f) {
  std::vector<std::uint8_t> plain = f.frm_payload;
  const bool downlink =
      f.type == FrameType::UnconfirmedDown || f.type == FrameType::ConfirmedDown;
  crypt_payload(s.app_s_key, f.dev_addr, f.fcnt, downlink, plain);
  return plain;
}

RxWindows rx_windows_after(Microseconds uplink_end, long long uplink_channel_hz,
                           int uplink_dr, const ClassTiming& t) {
  RxWindows w;
  w.rx1_open = uplink_end + t.rx1_delay;
  w.rx2_open = uplink_end + t.rx2_delay;
  w.rx1_channel_hz = uplink_channel_hz;
  w.rx1_dr = uplink_dr;
  return w;
}

bool class_a_receives(const RxWindows& w, const DownlinkEvent& d) {
  if (d.start == w.rx1_open && d.channel_hz == w.rx1_channel_hz && d.dr == w.rx1_dr) {
    return true;
  }
  const auto rx2 = reg::eu868_rx2();
  return d.start == w.rx2_open && d.channel_hz == rx2.center_freq_hz && d.dr == 0;
}

bool class_c_receives(const DownlinkEvent& d, bool transmitting) {
  const auto rx2 = reg::eu868_rx2();
  return !transmitting && d.channel_hz == rx2.center_freq_hz && d.dr == 0;
}

std::vector<Microseconds> ping_slot_offsets(int slots_per_beacon) {
  if (slots_per_beacon < 1) throw std::invalid_argument("need at least one ping slot");
  std::vector<Microseconds> out;
  out.reserve(slots_per_beacon);
  for (int k = 1; k <= slots_per_beacon; ++k) {
    out.push_back(Microseconds(kBeaconPeriod.count() * k / (slots_per_beacon + 1)));
  }
  return out;
}

bool class_b_receives(const ClassBState& st, const RxWindows& fallback,
                      const DownlinkEvent& d) {
  if (!st.beacon_lock) return class_a_receives(fallback, d);
  const auto rx2 = reg::eu868_rx2();
  if (d.channel_hz != rx2.center_freq_hz || d.dr != 0) return false;
  const auto offsets = ping_slot_offsets(st.slots_per_beacon);
  const auto since_beacon = d.start - st.last_beacon;
  for (auto off : offsets) {
    if (since_beacon == off) return true;
    // slots repeat every beacon period even if the next beacon tick has
    // not been processed yet
    if (since_beacon.count() > 0 &&
        (since_beacon.count() % kBeaconPeriod.count()) == off.count()) {
      return true;
    }
  }
  return false;
}

Microseconds next_ping_slot(const ClassBState& st, Microseconds t) {
  const auto offsets = ping_slot_offsets(st.slots_per_beacon);
  Microseconds base = st.last_beacon;
  while (true) {
    for (auto off : offsets) {
      if (base + off >= t) return base + off;
    }
    base += kBeaconPeriod;
  }
}

std::vector<reg::Channel> pre_join_channels() {
  std::vector<reg::Channel> out;
  for (const auto& c : reg::eu868_plan()) {
    if (c.mandatory) out.push_back(c);
  }
  return out;
}

std::vector<reg::Channel> post_join_channels() { return reg::eu868_uplink_channels(); }

}  // namespace lorasim::mac
