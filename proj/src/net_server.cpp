#include "lorasim/net_server.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "lorasim/airtime.hpp"

namespace lorasim::server {

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string hex8(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

const char* status_name(RowStatus s) {
  switch (s) {
    case RowStatus::Accepted: return "accepted";
    case RowStatus::Duplicate: return "duplicate";
    case RowStatus::Rejected: return "rejected";
  }
  return "?";
}

RowStatus status_from_name(const std::string& s) {
  if (s == "accepted") return RowStatus::Accepted;
  if (s == "duplicate") return RowStatus::Duplicate;
  if (s == "rejected") return RowStatus::Rejected;
  throw std::invalid_argument("unknown row status: " + s);
}

// logged SNR uses the demodulator's quarter-dB resolution
double quantize_snr(double snr) { return std::round(snr * 4.0) / 4.0; }

}  // namespace

std::string to_jsonl(const PacketRecord& r) {
  nlohmann::ordered_json j;
  j["timestamp"] = r.timestamp.count();
  j["dev_eui"] = hex16(r.dev_eui);
  j["dev_addr"] = hex8(r.dev_addr);
  j["fcnt"] = r.fcnt;
  j["frequency_mhz"] = static_cast<double>(r.frequency_hz) / 1e6;
  j["dr"] = r.dr;
  j["sf"] = r.sf;
  j["rssi_dbm"] = r.rssi_dbm;
  j["snr_db"] = quantize_snr(r.snr_db);
  j["gateway_id"] = r.gateway_id;
  j["crc_ok"] = r.crc_ok;
  j["payload_hex"] = r.payload_hex;
  if (r.duplicate_of) j["duplicate_of"] = *r.duplicate_of;
  j["ftype"] = r.ftype == FrameKind::Join ? "join" : "data";
  j["status"] = status_name(r.status);
  if (r.status == RowStatus::Rejected) j["reason"] = r.reason;
  return j.dump();
}

PacketRecord packet_record_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  PacketRecord r;
  r.timestamp = Microseconds(j.at("timestamp").get<std::int64_t>());
  r.dev_eui = std::stoull(j.at("dev_eui").get<std::string>(), nullptr, 16);
  r.dev_addr = static_cast<std::uint32_t>(
      std::stoul(j.at("dev_addr").get<std::string>(), nullptr, 16));
  r.fcnt = j.at("fcnt").get<std::uint16_t>();
  r.frequency_hz = static_cast<long long>(
      std::llround(j.at("frequency_mhz").get<double>() * 1e6));
  r.dr = j.at("dr").get<int>();
  r.sf = j.at("sf").get<int>();
  r.rssi_dbm = j.at("rssi_dbm").get<int>();
  r.snr_db = j.at("snr_db").get<double>();
  r.gateway_id = j.at("gateway_id").get<std::string>();
  r.crc_ok = j.at("crc_ok").get<bool>();
  r.payload_hex = j.at("payload_hex").get<std::string>();
  if (j.contains("duplicate_of")) r.duplicate_of = j["duplicate_of"].get<std::string>();
  r.ftype = j.at("ftype").get<std::string>() == "join" ? FrameKind::Join : FrameKind::Data;
  r.status = status_from_name(j.at("status").get<std::string>());
  if (j.contains("reason")) r.reason = j["reason"].get<std::string>();
  return r;
}

NetworkServer::NetworkServer(ServerConfig cfg, LogSink* sink)
    : cfg_(cfg),
      sink_(sink),
      next_dev_addr_(cfg.dev_addr_base),
      reassembler_(cfg.reassembly_timeout) {}

void NetworkServer::provision_abp(const mac::Session& s) {
  auto dev = std::make_unique<DeviceState>();
  dev->session = s;
  dev->joined = true;
  by_addr_[s.dev_addr] = dev.get();
  devices_[s.dev_eui] = std::move(dev);
}

void NetworkServer::provision_otaa(std::uint64_t dev_eui, const mac::Key& app_key) {
  auto dev = std::make_unique<DeviceState>();
  dev->session.dev_eui = dev_eui;
  dev->session.activation = mac::Activation::Otaa;
  dev->app_key = app_key;
  dev->joined = false;
  devices_[dev_eui] = std::move(dev);
}

const mac::Session* NetworkServer::session_by_addr(std::uint32_t dev_addr) const {
  auto it = by_addr_.find(dev_addr);
  return it == by_addr_.end() ? nullptr : &it->second->session;
}

mac::Session* NetworkServer::mutable_session_by_addr(std::uint32_t dev_addr) {
  auto it = by_addr_.find(dev_addr);
  return it == by_addr_.end() ? nullptr : &it->second->session;
}

const mac::Session* NetworkServer::session_by_eui(std::uint64_t dev_eui) const {
  auto it = devices_.find(dev_eui);
  if (it == devices_.end() || !it->second->joined) return nullptr;
  return &it->second->session;
}

void NetworkServer::log_row(PacketRecord row, const IngestResult& result) {
  row.status = result.status;
  row.reason = result.reason;
  if (sink_) sink_->append(row);
  switch (result.status) {
    case RowStatus::Accepted: ++counters_.accepted; break;
    case RowStatus::Duplicate: ++counters_.duplicates; break;
    case RowStatus::Rejected: ++counters_.rejected; break;
  }
}

IngestResult NetworkServer::ingest(const GatewayRecord& rec) {
  ++counters_.ingested;

  PacketRecord row;
  row.timestamp = rec.receive_time;
  row.frequency_hz = rec.frequency_hz;
  row.dr = rec.dr;
  row.sf = rec.sf;
  row.rssi_dbm = static_cast<int>(std::lround(rec.rssi_dbm));
  row.snr_db = rec.snr_db;
  row.gateway_id = rec.gateway_id;
  row.crc_ok = rec.crc_ok;
  row.payload_hex = util::to_hex(rec.frame);

  IngestResult result;
  if (rec.frame.empty()) {
    result.reason = "empty-frame";
    log_row(row, result);
    return result;
  }

  // Drop stale dedup state as time moves forward.
  for (auto it = dedup_.begin(); it != dedup_.end();) {
    if (rec.receive_time - it->second.first_seen > cfg_.dedup_window) {
      it = dedup_.erase(it);
    } else {
      ++it;
    }
  }

  mac::FrameType type;
  try {
    type = mac::frame_type_from_mhdr(rec.frame[0]);
  } catch (const mac::FormatError&) {
    result.reason = "bad-mhdr";
    log_row(row, result);
    return result;
  }

  if (!rec.crc_ok) {
    // logged for diagnostics, never forwarded to a session
    result.reason = "crc-failed";
    log_row(row, result);
    return result;
  }

  if (type == mac::FrameType::JoinRequest) {
    row.ftype = FrameKind::Join;
    return ingest_join(rec, std::move(row));
  }
  if (!mac::is_uplink(type)) {
    result.reason = "not-an-uplink";
    log_row(row, result);
    return result;
  }
  return ingest_data(rec, std::move(row));
}

IngestResult NetworkServer::ingest_data(const GatewayRecord& rec, PacketRecord row) {
  IngestResult result;
  mac::Frame frame;
  try {
    frame = mac::parse_frame(rec.frame);
  } catch (const mac::FormatError&) {
    result.reason = "malformed-frame";
    log_row(row, result);
    return result;
  }
  row.dev_addr = frame.dev_addr;
  row.fcnt = frame.fcnt;
  result.dev_addr = frame.dev_addr;
  result.fcnt = frame.fcnt;
  result.confirmed = frame.type == mac::FrameType::ConfirmedUp;

  auto dev_it = by_addr_.find(frame.dev_addr);
  if (dev_it == by_addr_.end()) {
    result.reason = "unknown-device";
    log_row(row, result);
    return result;
  }
  DeviceState& dev = *dev_it->second;
  row.dev_eui = dev.session.dev_eui;
  result.dev_eui = dev.session.dev_eui;

  const std::string dedup_key = "d:" + hex8(frame.dev_addr) + ":" +
                                std::to_string(frame.fcnt) + ":" + hex8(frame.mic);
  auto dup = dedup_.find(dedup_key);
  if (dup != dedup_.end()) {
    result.status = RowStatus::Duplicate;
    row.duplicate_of = dup->second.first_gateway;
    log_row(row, result);
    return result;
  }

  if (!mac::verify_mic(frame, dev.session.nwk_s_key)) {
    result.reason = "bad-mic";
    log_row(row, result);
    return result;
  }
  if (dev.last_fcnt && frame.fcnt <= *dev.last_fcnt) {
    result.reason = "fcnt-replay";
    log_row(row, result);
    return result;
  }

  dev.last_fcnt = frame.fcnt;
  dedup_[dedup_key] = {rec.receive_time, rec.gateway_id};
  result.status = RowStatus::Accepted;
  log_row(row, result);

  // Application hand-off: whole datagrams decode directly, fragments go
  // through the reassembly buffer.
  const auto plain = mac::decrypt_payload(dev.session, frame);
  if (plain.size() == meter::kFragmentSize) {
    try {
      const auto frag = meter::parse_fragment(plain);
      if (auto whole = reassembler_.add(frag, rec.receive_time)) {
        ++counters_.datagrams_reassembled;
        reassembled_.emplace_back(frame.dev_addr, *whole);
      }
    } catch (const meter::CodecError&) {
      // payload only looked like a fragment; not an application error
    }
  } else if (plain.size() == meter::kDatagramSize) {
    try {
      (void)meter::decode(plain);
      ++counters_.datagrams_reassembled;
      std::array<std::uint8_t, meter::kDatagramSize> whole{};
      std::copy(plain.begin(), plain.end(), whole.begin());
      reassembled_.emplace_back(frame.dev_addr, whole);
    } catch (const meter::CodecError&) {
    }
  }
  return result;
}

IngestResult NetworkServer::ingest_join(const GatewayRecord& rec, PacketRecord row) {
  IngestResult result;
  result.join = true;
  mac::JoinRequest jr;
  try {
    jr = mac::parse_join_request(rec.frame);
  } catch (const mac::FormatError&) {
    result.reason = "malformed-join";
    log_row(row, result);
    return result;
  }
  row.dev_eui = jr.dev_eui;
  result.dev_eui = jr.dev_eui;

  auto dev_it = devices_.find(jr.dev_eui);
  if (dev_it == devices_.end()) {
    result.reason = "unknown-device";
    log_row(row, result);
    return result;
  }
  DeviceState& dev = *dev_it->second;
  if (dev.session.activation != mac::Activation::Otaa) {
    result.reason = "not-otaa";
    log_row(row, result);
    return result;
  }
  if (!mac::verify_join_request(jr, dev.app_key)) {
    result.reason = "bad-mic";
    log_row(row, result);
    return result;
  }

  const std::string dedup_key =
      "j:" + hex16(jr.dev_eui) + ":" + std::to_string(jr.dev_nonce);
  auto dup = dedup_.find(dedup_key);
  if (dup != dedup_.end()) {
    result.status = RowStatus::Duplicate;
    row.duplicate_of = dup->second.first_gateway;
    log_row(row, result);
    return result;
  }
  dedup_[dedup_key] = {rec.receive_time, rec.gateway_id};

  // Rejoin: a fresh address and fresh session keys every time.
  if (dev.joined) by_addr_.erase(dev.session.dev_addr);
  const std::uint32_t dev_addr = next_dev_addr_++;
  const std::uint32_t join_nonce = next_join_nonce_++;
  dev.session = mac::derive_session(jr.dev_eui, dev.app_key, join_nonce, jr.dev_nonce,
                                    dev_addr);
  dev.joined = true;
  dev.last_fcnt.reset();
  by_addr_[dev_addr] = &dev;

  mac::JoinAccept accept;
  accept.join_nonce = join_nonce;
  accept.dev_addr = dev_addr;
  pending_accepts_.push_back({jr.dev_eui, dev_addr, mac::serialize(accept, dev.app_key)});

  result.status = RowStatus::Accepted;
  result.dev_addr = dev_addr;
  row.dev_addr = 0;  // not assigned at reception time
  log_row(row, result);
  return result;
}

std::vector<PendingJoinAccept> NetworkServer::take_pending_join_accepts() {
  return std::exchange(pending_accepts_, {});
}

std::vector<std::pair<std::uint32_t, std::array<std::uint8_t, meter::kDatagramSize>>>
NetworkServer::take_reassembled() {
  return std::exchange(reassembled_, {});
}

std::size_t NetworkServer::expire_partials(Microseconds now) {
  const auto expired = reassembler_.expire_stale(now);
  counters_.partials_expired += expired.size();
  return expired.size();
}

std::optional<std::string> choose_downlink_gateway(std::span<const GatewayRecord> copies) {
  const GatewayRecord* best = nullptr;
  for (const auto& c : copies) {
    if (!best || c.rssi_dbm > best->rssi_dbm ||
        (c.rssi_dbm == best->rssi_dbm && c.gateway_id < best->gateway_id)) {
      best = &c;
    }
  }
  if (!best) return std::nullopt;
  return best->gateway_id;
}

bool GatewayTxState::can_send_at(const reg::Channel& ch, Microseconds at,
                                 Microseconds toa) const {
  if (at < radio_busy_until) return false;
  return ledger.earliest_start(ch, at, toa) == at;
}

Microseconds GatewayTxState::earliest_send(const reg::Channel& ch, Microseconds t,
                                           Microseconds toa) const {
  return ledger.earliest_start(ch, std::max(t, radio_busy_until), toa);
}

void GatewayTxState::commit(const reg::Channel& ch, Microseconds start, Microseconds toa) {
  ledger.record(ch, start, toa);
  radio_busy_until = std::max(radio_busy_until, start + toa);
}

AckPlan schedule_ack(const GatewayTxState& gw, const mac::RxWindows& windows,
                     mac::DeviceClass dev_class, const reg::Channel& rx1_channel,
                     Microseconds rx1_toa, Microseconds rx2_toa) {
  const reg::Channel rx2 = reg::eu868_rx2();
  AckPlan plan;
  if (dev_class == mac::DeviceClass::A || dev_class == mac::DeviceClass::B) {
    try {
      if (gw.can_send_at(rx1_channel, windows.rx1_open, rx1_toa)) {
        plan.outcome = AckPlan::Outcome::Rx1;
        plan.start = windows.rx1_open;
        return plan;
      }
    } catch (const reg::DutyExceeded&) {
    }
    try {
      if (gw.can_send_at(rx2, windows.rx2_open, rx2_toa)) {
        plan.outcome = AckPlan::Outcome::Rx2;
        plan.start = windows.rx2_open;
        return plan;
      }
    } catch (const reg::DutyExceeded&) {
    }
    plan.outcome = AckPlan::Outcome::Dropped;
    plan.drop_reason = "duty-exhausted";
    return plan;
  }
  // Class C: any time after the uplink works; take the earliest instant
  // the RX2 sub-band and the radio allow. The device listens from the
  // moment its own transmission ends.
  const Microseconds uplink_end = windows.rx1_open - (windows.rx2_open - windows.rx1_open);
  try {
    plan.outcome = AckPlan::Outcome::ClassC;
    plan.start = gw.earliest_send(rx2, uplink_end, rx2_toa);
    return plan;
  } catch (const reg::DutyExceeded&) {
    plan.outcome = AckPlan::Outcome::Dropped;
    plan.drop_reason = "duty-exhausted";
    return plan;
  }
}

}  // namespace lorasim::server
