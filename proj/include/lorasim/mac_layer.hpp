#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lorasim/regulation.hpp"
#include "lorasim/util.hpp"

namespace lorasim::mac {

using Key = std::array<std::uint8_t, 16>;
using Block = std::array<std::uint8_t, 16>;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- keyed 128-bit primitive -------------------------------------------------
//
// Simulation-grade keyed transform. The production slot here is AES
// (CMAC for the tag, CTR for payload secrecy); the simulator only needs
// a deterministic keyed function whose output is sensitive to every key
// and input bit, which the tests pin down.

Block keyed_transform(const Key& key, const Block& in);

/// 4-byte tag over an arbitrary byte string (length-prefixed CBC-MAC
/// over keyed_transform).
std::uint32_t compute_tag(const Key& key, std::span<const std::uint8_t> data);

/// Counter-mode keystream XOR, self-inverse. The nonce binds device
/// address, frame counter and direction.
void crypt_payload(const Key& key, std::uint32_t dev_addr, std::uint16_t fcnt,
                   bool downlink, std::span<std::uint8_t> payload);

// --- frames ------------------------------------------------------------------

enum class FrameType : std::uint8_t {
  JoinRequest = 0,
  JoinAccept = 1,
  UnconfirmedUp = 2,
  ConfirmedUp = 3,
  UnconfirmedDown = 4,
  ConfirmedDown = 5,
};

std::uint8_t mhdr_byte(FrameType t);
FrameType frame_type_from_mhdr(std::uint8_t mhdr);
bool is_uplink(FrameType t);
bool is_data(FrameType t);

constexpr std::uint8_t kFctrlAck = 0x20;
constexpr int kFrameOverhead = 13;  // mhdr + devaddr + fctrl + fcnt + fport + mic

/// Data frame (up or down). Serialized length is always
/// kFrameOverhead + frm_payload.size().
struct Frame {
  FrameType type = FrameType::UnconfirmedUp;
  std::uint32_t dev_addr = 0;
  std::uint8_t fctrl = 0;
  std::uint16_t fcnt = 0;
  std::uint8_t fport = 0;
  std::vector<std::uint8_t> frm_payload;  // ciphertext on the wire
  std::uint32_t mic = 0;
};

std::vector<std::uint8_t> serialize(const Frame& f);
Frame parse_frame(std::span<const std::uint8_t> bytes);  // throws FormatError

std::uint32_t expected_mic(const Frame& f, const Key& nwk_s_key);
bool verify_mic(const Frame& f, const Key& nwk_s_key);

struct JoinRequest {  // 23 bytes on the wire
  std::uint64_t app_eui = 0;
  std::uint64_t dev_eui = 0;
  std::uint16_t dev_nonce = 0;
  std::uint32_t mic = 0;
};

struct JoinAccept {  // 17 bytes on the wire
  std::uint32_t join_nonce = 0;
  std::uint32_t dev_addr = 0;
  std::uint32_t mic = 0;
};

constexpr int kJoinRequestSize = 23;
constexpr int kJoinAcceptSize = 17;

std::vector<std::uint8_t> serialize(const JoinRequest& j, const Key& app_key);
JoinRequest parse_join_request(std::span<const std::uint8_t> bytes);
bool verify_join_request(const JoinRequest& j, const Key& app_key);

std::vector<std::uint8_t> serialize(const JoinAccept& j, const Key& app_key);
JoinAccept parse_join_accept(std::span<const std::uint8_t> bytes);
bool verify_join_accept(const JoinAccept& j, const Key& app_key);

// --- sessions ----------------------------------------------------------------

enum class Activation { Otaa, Abp };

struct Session {
  std::uint64_t dev_eui = 0;
  std::uint32_t dev_addr = 0;
  Key nwk_s_key{};
  Key app_s_key{};
  std::uint16_t fcnt_up = 0;    // next uplink counter value
  std::uint16_t fcnt_down = 0;
  Activation activation = Activation::Abp;
};

/// Session keys from the root key and the join nonces. Distinct nonces
/// give distinct sessions; nwk and app keys always differ.
Session derive_session(std::uint64_t dev_eui, const Key& app_key,
                       std::uint32_t join_nonce, std::uint16_t dev_nonce,
                       std::uint32_t dev_addr);

struct PayloadTooLong : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Builds the next uplink: encrypts the payload under app_s_key,
/// computes the MIC under nwk_s_key and advances fcnt_up.
Frame build_uplink(Session& s, std::uint8_t fport, std::span<const std::uint8_t> payload,
                   bool confirmed, int max_payload);

/// ACK-only downlink (13 bytes on the wire).
Frame build_ack_downlink(Session& s);

std::vector<std::uint8_t> decrypt_payload(const Session& s, const Frame& f);

// --- device classes ----------------------------------------------------------

enum class DeviceClass { A, B, C };

struct ClassTiming {
  Microseconds rx1_delay{1'000'000};
  Microseconds rx2_delay{2'000'000};
};

/// The two Class A receive instants after an uplink. RX1 mirrors the
/// uplink channel and data rate; RX2 is fixed at 869.525 MHz / DR0.
struct RxWindows {
  Microseconds rx1_open{0};
  Microseconds rx2_open{0};
  long long rx1_channel_hz = 0;
  int rx1_dr = 0;
};

RxWindows rx_windows_after(Microseconds uplink_end, long long uplink_channel_hz,
                           int uplink_dr, const ClassTiming& t = {});

struct DownlinkEvent {
  Microseconds start{0};
  long long channel_hz = 0;
  int dr = 0;
};

/// A Class A device catches a downlink only when it starts exactly at
/// one of the two window instants with matching channel and data rate.
bool class_a_receives(const RxWindows& w, const DownlinkEvent& d);

/// A Class C device listens on RX2 parameters whenever it is not
/// transmitting.
bool class_c_receives(const DownlinkEvent& d, bool transmitting);

constexpr Microseconds kBeaconPeriod{128'000'000};

/// Deterministic ping-slot instants strictly between two beacons.
std::vector<Microseconds> ping_slot_offsets(int slots_per_beacon);

struct ClassBState {
  bool beacon_lock = false;
  Microseconds last_beacon{0};
  int slots_per_beacon = 8;
};

/// With beacon lock: downlinks land only on ping-slot instants (RX2
/// parameters). Without it the device degrades to Class A and the
/// fallback windows apply.
bool class_b_receives(const ClassBState& st, const RxWindows& fallback,
                      const DownlinkEvent& d);

/// Next ping-slot instant at or after t (requires beacon lock).
Microseconds next_ping_slot(const ClassBState& st, Microseconds t);

// --- channel lifecycle ---------------------------------------------------------

/// Before the join-accept only the three mandatory channels may be
/// used; the accept's channel list unlocks all eight.
std::vector<reg::Channel> pre_join_channels();
std::vector<reg::Channel> post_join_channels();

}  // namespace lorasim::mac
