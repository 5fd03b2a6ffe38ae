#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lorasim/mac_layer.hpp"
#include "lorasim/meter_codec.hpp"
#include "lorasim/regulation.hpp"
#include "lorasim/util.hpp"

namespace lorasim::server {

/// What a gateway forwards for one demodulated frame: the frame plus
/// reception quality metadata.
struct GatewayRecord {
  std::string gateway_id;
  Microseconds receive_time{0};
  long long frequency_hz = 0;
  int dr = 0;
  int sf = 7;
  double rssi_dbm = 0;
  double snr_db = 0;
  bool crc_ok = true;
  std::vector<std::uint8_t> frame;
};

enum class RowStatus { Accepted, Duplicate, Rejected };
enum class FrameKind { Data, Join };

/// One line of the packet log.
struct PacketRecord {
  Microseconds timestamp{0};
  std::uint64_t dev_eui = 0;
  std::uint32_t dev_addr = 0;
  std::uint16_t fcnt = 0;
  long long frequency_hz = 0;
  int dr = 0;
  int sf = 7;
  int rssi_dbm = 0;
  double snr_db = 0;
  std::string gateway_id;
  bool crc_ok = true;
  std::string payload_hex;
  std::optional<std::string> duplicate_of;  // gateway id of the accepted copy
  FrameKind ftype = FrameKind::Data;
  RowStatus status = RowStatus::Accepted;
  std::string reason;  // set on rejected rows
};

std::string to_jsonl(const PacketRecord& r);
PacketRecord packet_record_from_json(const std::string& line);

class LogSink {
 public:
  virtual ~LogSink() = default;
  virtual void append(const PacketRecord& r) = 0;
};

/// Accumulates the log in memory; the CLI writes the final string out.
class StringLogSink : public LogSink {
 public:
  void append(const PacketRecord& r) override { text_ += to_jsonl(r) + "\n"; }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

struct ServerConfig {
  Microseconds dedup_window{2'000'000};
  Microseconds reassembly_timeout{600'000'000};
  std::uint32_t dev_addr_base = 0x26000001;
};

struct IngestResult {
  RowStatus status = RowStatus::Rejected;
  std::string reason;
  std::uint32_t dev_addr = 0;
  std::uint16_t fcnt = 0;
  bool confirmed = false;
  bool join = false;
  std::uint64_t dev_eui = 0;
};

struct PendingJoinAccept {
  std::uint64_t dev_eui = 0;
  std::uint32_t dev_addr = 0;
  std::vector<std::uint8_t> frame;
};

/// Network-server core: dedup across gateways, MIC check, frame-counter
/// replay rejection, fragment reassembly and the append-only packet log.
class NetworkServer {
 public:
  NetworkServer(ServerConfig cfg, LogSink* sink);

  void provision_abp(const mac::Session& s);
  void provision_otaa(std::uint64_t dev_eui, const mac::Key& app_key);

  IngestResult ingest(const GatewayRecord& rec);

  /// Join accepts produced by ingested join requests, ready for the
  /// downlink path. Cleared by the call.
  std::vector<PendingJoinAccept> take_pending_join_accepts();

  /// Datagrams completed by fragment reassembly since the last call.
  std::vector<std::pair<std::uint32_t, std::array<std::uint8_t, meter::kDatagramSize>>>
  take_reassembled();

  /// Expire stale reassembly partials; returns how many were dropped.
  std::size_t expire_partials(Microseconds now);

  const mac::Session* session_by_addr(std::uint32_t dev_addr) const;
  const mac::Session* session_by_eui(std::uint64_t dev_eui) const;
  mac::Session* mutable_session_by_addr(std::uint32_t dev_addr);

  struct Counters {
    std::uint64_t ingested = 0;
    std::uint64_t accepted = 0;
    std::uint64_t duplicates = 0;
    std::uint64_t rejected = 0;
    std::uint64_t datagrams_reassembled = 0;
    std::uint64_t partials_expired = 0;
  };
  const Counters& counters() const { return counters_; }

 private:
  struct DeviceState {
    mac::Session session;
    bool joined = false;
    mac::Key app_key{};
    std::optional<std::uint16_t> last_fcnt;  // highest accepted uplink counter
  };

  struct DedupEntry {
    Microseconds first_seen{0};
    std::string first_gateway;
  };

  IngestResult ingest_data(const GatewayRecord& rec, PacketRecord row);
  IngestResult ingest_join(const GatewayRecord& rec, PacketRecord row);
  void log_row(PacketRecord row, const IngestResult& result);

  ServerConfig cfg_;
  LogSink* sink_;
  Counters counters_;
  std::map<std::uint32_t, DeviceState*> by_addr_;
  std::map<std::uint64_t, std::unique_ptr<DeviceState>> devices_;
  std::map<std::string, DedupEntry> dedup_;          // key -> first copy
  std::uint32_t next_dev_addr_;
  std::uint32_t next_join_nonce_ = 1;
  meter::Reassembler reassembler_;
  std::vector<PendingJoinAccept> pending_accepts_;
  std::vector<std::pair<std::uint32_t, std::array<std::uint8_t, meter::kDatagramSize>>>
      reassembled_;
};

/// Max RSSI wins; ties go to the lexicographically smallest gateway id.
std::optional<std::string> choose_downlink_gateway(std::span<const GatewayRecord> copies);

// --- downlink/ACK scheduling ---------------------------------------------------

/// Transmit-side state of one gateway: its duty ledger plus the radio
/// busy interval (one transmitter per gateway).
struct GatewayTxState {
  reg::DutyLedger ledger;
  Microseconds radio_busy_until{0};

  explicit GatewayTxState(reg::DutyAccounting mode = reg::DutyAccounting::PerSubBand)
      : ledger(mode) {}

  bool can_send_at(const reg::Channel& ch, Microseconds at, Microseconds toa) const;
  Microseconds earliest_send(const reg::Channel& ch, Microseconds t, Microseconds toa) const;
  void commit(const reg::Channel& ch, Microseconds start, Microseconds toa);
};

/// One-shot ACK planning against the gateway state as it stands:
/// Class A tries the two window instants, Class C takes the earliest
/// duty-permitted moment on RX2.
struct AckPlan {
  enum class Outcome { Rx1, Rx2, ClassC, Dropped };
  Outcome outcome = Outcome::Dropped;
  Microseconds start{0};
  std::string drop_reason;
};

AckPlan schedule_ack(const GatewayTxState& gw, const mac::RxWindows& windows,
                     mac::DeviceClass dev_class, const reg::Channel& rx1_channel,
                     Microseconds rx1_toa, Microseconds rx2_toa);

}  // namespace lorasim::server
