#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorasim/link_model.hpp"
#include "lorasim/mac_layer.hpp"
#include "lorasim/net_server.hpp"
#include "lorasim/regulation.hpp"
#include "lorasim/util.hpp"

namespace lorasim::sim {

enum class PayloadKind { Meter, Raw };

struct NodeSpec {
  std::string name;
  std::uint64_t dev_eui = 0;  // 0: assigned from the node index
  link::Position position;
  link::Obstacles obstacles;
  mac::DeviceClass dev_class = mac::DeviceClass::A;
  mac::Activation activation = mac::Activation::Abp;
  int dr = 0;
  double tx_power_dbm = 14.0;
  double antenna_gain_dbi = 3.0;
  double period_s = 60.0;
  double jitter_frac = 0.05;  // uniform +-frac of the period, phase-locked
  bool confirmed = false;
  PayloadKind payload = PayloadKind::Meter;
  int raw_payload_size = 12;
  int retry_limit = 2;        // Class A confirmed retransmissions
  double start_s = 0.0;
  double stop_s = -1.0;       // <0: run to scenario end
  double phase_s = -1.0;      // first-send offset; <0: random within one period
  int join_dr = 0;            // OTAA joins go out at the most robust rate
  std::optional<long long> forced_channel_hz;  // pin all uplinks to one channel
  int ping_slots_per_beacon = 8;               // Class B
};

struct GatewaySpec {
  std::string id;
  link::Position position;
  int demodulators = 8;
  std::vector<long long> listen_channels_hz;  // empty: the full uplink set
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  double duration_s = 3600.0;
  link::Environment environment;
  reg::DutyAccounting accounting = reg::DutyAccounting::PerSubBand;
  std::vector<reg::Channel> uplink_channels;  // empty: EU868 default 8
  std::vector<GatewaySpec> gateways;
  std::vector<NodeSpec> nodes;
};

/// Empty when the scenario is runnable; otherwise one message per
/// violation, each prefixed with the offending config path.
std::vector<std::string> validate(const Scenario& s);

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::ordered_json scenario_to_json(const Scenario& s);

struct SummaryStats {
  std::uint64_t count = 0;
  double min = 0, max = 0, mean = 0, q25 = 0, median = 0, q75 = 0;
};
SummaryStats summarize(std::vector<double> values);

struct NodeStats {
  std::string name;
  std::uint64_t dev_eui = 0;
  std::uint64_t sent = 0;       // transmitted data frames
  std::uint64_t received = 0;   // unique frames accepted by the server
  std::uint64_t confirmed_sent = 0;
  std::uint64_t ack_missed = 0;
  std::uint64_t joins_attempted = 0;
  std::uint64_t joins_completed = 0;
  SummaryStats rssi;
  SummaryStats snr;
  double per_percent() const {
    return sent == 0 ? 0.0 : 100.0 * static_cast<double>(sent - received) /
                                 static_cast<double>(sent);
  }
};

struct GatewayStats {
  std::string id;
  std::uint64_t received_copies = 0;
  std::uint64_t collided = 0;
  std::uint64_t below_threshold = 0;
  std::uint64_t saturation_drops = 0;
  std::uint64_t downlinks_sent = 0;
  std::map<long long, std::uint64_t> channel_counts;  // received per frequency
};

struct RunStats {
  std::map<std::string, NodeStats> nodes;
  std::map<std::string, GatewayStats> gateways;
  server::NetworkServer::Counters server;
  std::uint64_t uplink_transmissions = 0;  // data + join frames on air
  std::uint64_t acks_dropped_by_server = 0;
};

/// One on-air event as the duty replay checker sees it.
struct TxTrace {
  std::string source;      // "node/<name>" or "gw/<id>"
  std::string ledger_key;  // sub-band or channel key, per accounting mode
  long long channel_hz = 0;
  int sf = 7;
  Microseconds start{0};
  Microseconds toa{0};
  int duty_permille = 10;
};

struct RunResult {
  std::string packet_log;  // JSONL, one object per ingested copy
  RunStats stats;
  std::vector<TxTrace> trace;
};

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunResult run(const Scenario& s);

nlohmann::ordered_json stats_to_json(const RunStats& st);

std::vector<server::PacketRecord> parse_log(const std::string& jsonl);

/// Received packets per channel frequency (rejected rows excluded).
std::map<long long, std::uint64_t> channel_histogram(
    const std::vector<server::PacketRecord>& records);

/// Sliding-window duty audit over a transmission trace. Any window of
/// the ledger length must hold at most duty*window of started airtime
/// per (transmitter, sub-band); overlap-clipped airtime may exceed it by
/// at most one frame.
struct DutyViolation {
  std::string source;
  std::string ledger_key;
  Microseconds window_end{0};
  Microseconds used{0};
  Microseconds budget{0};
};
std::vector<DutyViolation> replay_duty_check(const std::vector<TxTrace>& trace,
                                             Microseconds window = Microseconds(3'600'000'000LL));

// --- shipped presets -----------------------------------------------------------

Scenario indoor_building_scenario();  // nine-position office building sweep
Scenario outdoor_scenario();          // three-site range test
Scenario contention_scenario(mac::DeviceClass measured_class);

/// Names: indoor-sciencepark3, outdoor-hagenberg, ack-contention-a,
/// ack-contention-b, ack-contention-c.
Scenario preset(const std::string& name);
std::vector<std::string> preset_names();

/// Nodes whose ACK misses the class-comparison test counts.
std::vector<std::string> contention_measured_nodes();

}  // namespace lorasim::sim
