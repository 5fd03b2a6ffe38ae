#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "lorasim/airtime.hpp"
#include "lorasim/sim_engine.hpp"

namespace lorasim::sim {

namespace {

const char* class_name(mac::DeviceClass c) {
  switch (c) {
    case mac::DeviceClass::A: return "A";
    case mac::DeviceClass::B: return "B";
    case mac::DeviceClass::C: return "C";
  }
  return "?";
}

mac::DeviceClass class_from_name(const std::string& s) {
  if (s == "A" || s == "a") return mac::DeviceClass::A;
  if (s == "B" || s == "b") return mac::DeviceClass::B;
  if (s == "C" || s == "c") return mac::DeviceClass::C;
  throw ScenarioError("unknown device class: " + s);
}

nlohmann::ordered_json channel_to_json(const reg::Channel& c) {
  nlohmann::ordered_json j;
  j["frequency_mhz"] = c.freq_mhz();
  j["bw_hz"] = c.bw_hz;
  j["sub_band"] = c.sub_band;
  j["duty_cycle"] = c.duty_cycle();
  j["max_erp_dbm"] = c.max_erp_dbm;
  j["mandatory"] = c.mandatory;
  return j;
}

reg::Channel channel_from_json(const nlohmann::json& j) {
  reg::Channel c;
  c.center_freq_hz = static_cast<long long>(std::llround(j.at("frequency_mhz").get<double>() * 1e6));
  c.bw_hz = j.value("bw_hz", 125000L);
  c.sub_band = j.at("sub_band").get<std::string>();
  c.duty_permille = reg::to_permille(j.at("duty_cycle").get<double>());
  c.max_erp_dbm = j.value("max_erp_dbm", 14.0);
  c.mandatory = j.value("mandatory", false);
  return c;
}

nlohmann::ordered_json position_to_json(const link::Position& p) {
  return nlohmann::ordered_json{{"x", p.x}, {"y", p.y}, {"z", p.z}};
}

link::Position position_from_json(const nlohmann::json& j) {
  return {j.value("x", 0.0), j.value("y", 0.0), j.value("z", 0.0)};
}

}  // namespace

std::vector<std::string> validate(const Scenario& s) {
  std::vector<std::string> errs;
  auto err = [&](const std::string& path, const std::string& msg) {
    errs.push_back(path + ": " + msg);
  };

  if (s.duration_s <= 0) err("duration_s", "must be positive");
  if (s.gateways.empty()) err("gateways", "need at least one gateway");
  if (s.nodes.empty()) err("nodes", "need at least one node");

  const auto channels =
      s.uplink_channels.empty() ? reg::eu868_uplink_channels() : s.uplink_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const auto& c = channels[i];
    if (c.center_freq_hz <= 0) err("channels[" + std::to_string(i) + "]", "bad frequency");
    if (c.duty_permille < 1 || c.duty_permille > 1000) {
      err("channels[" + std::to_string(i) + "]", "duty cycle out of range");
    }
  }

  std::set<std::string> gw_ids;
  for (std::size_t i = 0; i < s.gateways.size(); ++i) {
    const auto& g = s.gateways[i];
    const std::string path = "gateways[" + std::to_string(i) + "]";
    if (g.id.empty()) err(path + ".id", "must not be empty");
    if (!gw_ids.insert(g.id).second) err(path + ".id", "duplicate gateway id");
    if (!std::isfinite(g.position.x) || !std::isfinite(g.position.y) ||
        !std::isfinite(g.position.z)) {
      err(path + ".position", "coordinates must be finite");
    }
    if (g.demodulators < 1) err(path + ".demodulators", "must be >= 1");
  }

  std::set<std::string> names;
  std::set<std::uint64_t> euis;
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const auto& n = s.nodes[i];
    const std::string path = "nodes[" + std::to_string(i) + "]";
    if (n.name.empty()) err(path + ".name", "must not be empty");
    if (!names.insert(n.name).second) err(path + ".name", "duplicate node name");
    if (n.dev_eui != 0 && !euis.insert(n.dev_eui).second) {
      err(path + ".dev_eui", "duplicate dev_eui");
    }
    if (!std::isfinite(n.position.x) || !std::isfinite(n.position.y) ||
        !std::isfinite(n.position.z)) {
      err(path + ".position", "coordinates must be finite");
    }
    if (n.dr < 0 || n.dr >= airtime::kDataRateCount) err(path + ".dr", "must be in 0..5");
    if (n.period_s <= 0) err(path + ".period_s", "must be positive");
    if (n.jitter_frac < 0 || n.jitter_frac > 0.5) {
      err(path + ".jitter_frac", "must be in 0..0.5");
    }
    if (n.retry_limit < 0) err(path + ".retry_limit", "must be >= 0");
    if (n.obstacles.floors < 0 || n.obstacles.walls < 0) {
      err(path + ".obstacles", "counts must be >= 0");
    }
    if (n.antenna_gain_dbi < -128 || n.antenna_gain_dbi > 127) {
      err(path + ".antenna_gain_dbi", "must be in -128..127");
    }
    if (n.payload == PayloadKind::Raw &&
        (n.raw_payload_size < 0 ||
         n.raw_payload_size > airtime::max_app_payload(n.dr))) {
      err(path + ".raw_payload_size",
          "must be 0.." + std::to_string(airtime::max_app_payload(n.dr)) +
              " for dr " + std::to_string(n.dr));
    }
    if (n.ping_slots_per_beacon < 1) err(path + ".ping_slots_per_beacon", "must be >= 1");
    if (n.stop_s >= 0 && n.stop_s <= n.start_s) {
      err(path + ".stop_s", "must be after start_s");
    }
    if (n.join_dr < 0 || n.join_dr >= airtime::kDataRateCount) {
      err(path + ".join_dr", "must be in 0..5");
    }
    // ERP: every channel the node may pick must admit its power
    for (const auto& c : channels) {
      if (n.forced_channel_hz && c.center_freq_hz != *n.forced_channel_hz) continue;
      if (auto v = reg::check_erp(n.tx_power_dbm, c)) {
        err(path + ".tx_power_dbm",
            "exceeds max ERP of " + std::to_string(c.max_erp_dbm) + " dBm on " +
                std::to_string(c.freq_mhz()) + " MHz by " +
                std::to_string(v->excess_db) + " dB");
        break;
      }
    }
    if (n.forced_channel_hz) {
      const bool known = std::any_of(channels.begin(), channels.end(), [&](const auto& c) {
        return c.center_freq_hz == *n.forced_channel_hz;
      });
      if (!known) err(path + ".forced_channel_hz", "not part of the channel plan");
    }
    for (const auto& g : s.gateways) {
      if (link::distance_m(n.position, g.position) <= 0.0) {
        err(path + ".position", "coincides with gateway " + g.id);
        break;
      }
    }
  }

  const auto& env = s.environment;
  if (env.floor_penetration_db < 0 || env.wall_penetration_db < 0 ||
      env.basement_extra_db < 0 || env.shadowing_sigma_db < 0) {
    err("environment", "attenuation terms must be >= 0");
  }
  if (env.reference_loss_db < 0) err("environment.reference_loss_db", "must be >= 0");
  return errs;
}

Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  s.name = j.value("name", std::string{});
  s.seed = j.at("seed").get<std::uint64_t>();
  s.duration_s = j.at("duration_s").get<double>();

  if (j.contains("environment")) {
    const auto& e = j["environment"];
    s.environment.path_loss_exponent = e.value("path_loss_exponent", 2.9);
    s.environment.reference_loss_db = e.value("reference_loss_db", 40.0);
    s.environment.floor_penetration_db = e.value("floor_penetration_db", 15.0);
    s.environment.wall_penetration_db = e.value("wall_penetration_db", 5.0);
    s.environment.basement_extra_db = e.value("basement_extra_db", 20.0);
    s.environment.shadowing_sigma_db = e.value("shadowing_sigma_db", 2.0);
    s.environment.noise_figure_db = e.value("noise_figure_db", 6.0);
  }
  if (j.contains("duty_accounting")) {
    const auto a = j["duty_accounting"].get<std::string>();
    if (a == "per_sub_band") {
      s.accounting = reg::DutyAccounting::PerSubBand;
    } else if (a == "per_channel") {
      s.accounting = reg::DutyAccounting::PerChannel;
    } else {
      throw ScenarioError("duty_accounting must be per_sub_band or per_channel");
    }
  }
  if (j.contains("channels")) {
    for (const auto& c : j["channels"]) s.uplink_channels.push_back(channel_from_json(c));
  }
  for (const auto& g : j.at("gateways")) {
    GatewaySpec gw;
    gw.id = g.at("id").get<std::string>();
    gw.position = position_from_json(g.at("position"));
    gw.demodulators = g.value("demodulators", 8);
    if (g.contains("listen_channels_mhz")) {
      for (const auto& f : g["listen_channels_mhz"]) {
        gw.listen_channels_hz.push_back(
            static_cast<long long>(std::llround(f.get<double>() * 1e6)));
      }
    }
    s.gateways.push_back(std::move(gw));
  }
  for (const auto& n : j.at("nodes")) {
    NodeSpec node;
    node.name = n.at("name").get<std::string>();
    if (n.contains("dev_eui")) {
      node.dev_eui = std::stoull(n["dev_eui"].get<std::string>(), nullptr, 16);
    }
    node.position = position_from_json(n.at("position"));
    if (n.contains("obstacles")) {
      const auto& o = n["obstacles"];
      node.obstacles.floors = o.value("floors", 0);
      node.obstacles.walls = o.value("walls", 0);
      node.obstacles.basement = o.value("basement", false);
    }
    node.dev_class = class_from_name(n.value("class", std::string("A")));
    const auto act = n.value("activation", std::string("abp"));
    if (act == "abp") {
      node.activation = mac::Activation::Abp;
    } else if (act == "otaa") {
      node.activation = mac::Activation::Otaa;
    } else {
      throw ScenarioError("activation must be abp or otaa");
    }
    node.dr = n.at("dr").get<int>();
    node.tx_power_dbm = n.value("tx_power_dbm", 14.0);
    node.antenna_gain_dbi = n.value("antenna_gain_dbi", 3.0);
    node.period_s = n.at("period_s").get<double>();
    node.jitter_frac = n.value("jitter_frac", 0.05);
    node.confirmed = n.value("confirmed", false);
    if (n.contains("payload")) {
      const auto& p = n["payload"];
      const auto kind = p.at("kind").get<std::string>();
      if (kind == "meter") {
        node.payload = PayloadKind::Meter;
      } else if (kind == "raw") {
        node.payload = PayloadKind::Raw;
        node.raw_payload_size = p.value("size", 12);
      } else {
        throw ScenarioError("payload.kind must be meter or raw");
      }
    }
    node.retry_limit = n.value("retry_limit", 2);
    node.start_s = n.value("start_s", 0.0);
    node.stop_s = n.value("stop_s", -1.0);
    node.phase_s = n.value("phase_s", -1.0);
    node.join_dr = n.value("join_dr", 0);
    if (n.contains("forced_channel_mhz")) {
      node.forced_channel_hz =
          static_cast<long long>(std::llround(n["forced_channel_mhz"].get<double>() * 1e6));
    }
    node.ping_slots_per_beacon = n.value("ping_slots_per_beacon", 8);
    s.nodes.push_back(std::move(node));
  }
  return s;
}

nlohmann::ordered_json scenario_to_json(const Scenario& s) {
  nlohmann::ordered_json j;
  if (!s.name.empty()) j["name"] = s.name;
  j["seed"] = s.seed;
  j["duration_s"] = s.duration_s;
  j["environment"] = {
      {"path_loss_exponent", s.environment.path_loss_exponent},
      {"reference_loss_db", s.environment.reference_loss_db},
      {"floor_penetration_db", s.environment.floor_penetration_db},
      {"wall_penetration_db", s.environment.wall_penetration_db},
      {"basement_extra_db", s.environment.basement_extra_db},
      {"shadowing_sigma_db", s.environment.shadowing_sigma_db},
      {"noise_figure_db", s.environment.noise_figure_db},
  };
  j["duty_accounting"] =
      s.accounting == reg::DutyAccounting::PerSubBand ? "per_sub_band" : "per_channel";
  if (!s.uplink_channels.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : s.uplink_channels) arr.push_back(channel_to_json(c));
    j["channels"] = arr;
  }
  auto gws = nlohmann::ordered_json::array();
  for (const auto& g : s.gateways) {
    nlohmann::ordered_json gj;
    gj["id"] = g.id;
    gj["position"] = position_to_json(g.position);
    gj["demodulators"] = g.demodulators;
    if (!g.listen_channels_hz.empty()) {
      auto arr = nlohmann::ordered_json::array();
      for (auto hz : g.listen_channels_hz) arr.push_back(static_cast<double>(hz) / 1e6);
      gj["listen_channels_mhz"] = arr;
    }
    gws.push_back(std::move(gj));
  }
  j["gateways"] = gws;
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& n : s.nodes) {
    nlohmann::ordered_json nj;
    nj["name"] = n.name;
    if (n.dev_eui != 0) {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(n.dev_eui));
      nj["dev_eui"] = buf;
    }
    nj["position"] = position_to_json(n.position);
    if (n.obstacles.floors || n.obstacles.walls || n.obstacles.basement) {
      nj["obstacles"] = {{"floors", n.obstacles.floors},
                         {"walls", n.obstacles.walls},
                         {"basement", n.obstacles.basement}};
    }
    nj["class"] = class_name(n.dev_class);
    nj["activation"] = n.activation == mac::Activation::Abp ? "abp" : "otaa";
    nj["dr"] = n.dr;
    nj["tx_power_dbm"] = n.tx_power_dbm;
    nj["antenna_gain_dbi"] = n.antenna_gain_dbi;
    nj["period_s"] = n.period_s;
    nj["jitter_frac"] = n.jitter_frac;
    nj["confirmed"] = n.confirmed;
    if (n.payload == PayloadKind::Meter) {
      nj["payload"] = {{"kind", "meter"}};
    } else {
      nj["payload"] = {{"kind", "raw"}, {"size", n.raw_payload_size}};
    }
    nj["retry_limit"] = n.retry_limit;
    if (n.start_s != 0) nj["start_s"] = n.start_s;
    if (n.stop_s >= 0) nj["stop_s"] = n.stop_s;
    if (n.phase_s >= 0) nj["phase_s"] = n.phase_s;
    if (n.activation == mac::Activation::Otaa) nj["join_dr"] = n.join_dr;
    if (n.forced_channel_hz) {
      nj["forced_channel_mhz"] = static_cast<double>(*n.forced_channel_hz) / 1e6;
    }
    if (n.dev_class == mac::DeviceClass::B) {
      nj["ping_slots_per_beacon"] = n.ping_slots_per_beacon;
    }
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = nodes;
  return j;
}

SummaryStats summarize(std::vector<double> values) {
  SummaryStats s;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.count = values.size();
  s.min = values.front();
  s.max = values.back();
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  auto quantile = [&](double p) {
    const double idx = p * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  s.q25 = quantile(0.25);
  s.median = quantile(0.5);
  s.q75 = quantile(0.75);
  return s;
}

nlohmann::ordered_json stats_to_json(const RunStats& st) {
  nlohmann::ordered_json j;
  auto summary = [](const SummaryStats& s) {
    return nlohmann::ordered_json{{"count", s.count}, {"min", s.min},
                                  {"q25", s.q25},     {"median", s.median},
                                  {"q75", s.q75},     {"max", s.max},
                                  {"mean", s.mean}};
  };
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& [name, n] : st.nodes) {
    nlohmann::ordered_json nj;
    nj["name"] = n.name;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(n.dev_eui));
    nj["dev_eui"] = buf;
    nj["sent"] = n.sent;
    nj["received"] = n.received;
    nj["per_percent"] = n.per_percent();
    nj["confirmed_sent"] = n.confirmed_sent;
    nj["ack_missed"] = n.ack_missed;
    nj["joins_attempted"] = n.joins_attempted;
    nj["joins_completed"] = n.joins_completed;
    nj["rssi"] = summary(n.rssi);
    nj["snr"] = summary(n.snr);
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = nodes;
  auto gws = nlohmann::ordered_json::array();
  for (const auto& [id, g] : st.gateways) {
    nlohmann::ordered_json gj;
    gj["id"] = g.id;
    gj["received_copies"] = g.received_copies;
    gj["collided"] = g.collided;
    gj["below_threshold"] = g.below_threshold;
    gj["saturation_drops"] = g.saturation_drops;
    gj["downlinks_sent"] = g.downlinks_sent;
    nlohmann::ordered_json counts;
    for (const auto& [hz, count] : g.channel_counts) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", static_cast<double>(hz) / 1e6);
      counts[buf] = count;
    }
    gj["channel_counts"] = counts;
    gws.push_back(std::move(gj));
  }
  j["gateways"] = gws;
  j["server"] = {{"ingested", st.server.ingested},
                 {"accepted", st.server.accepted},
                 {"duplicates", st.server.duplicates},
                 {"rejected", st.server.rejected},
                 {"datagrams_reassembled", st.server.datagrams_reassembled},
                 {"partials_expired", st.server.partials_expired}};
  j["uplink_transmissions"] = st.uplink_transmissions;
  j["acks_dropped_by_server"] = st.acks_dropped_by_server;
  return j;
}

std::vector<server::PacketRecord> parse_log(const std::string& jsonl) {
  std::vector<server::PacketRecord> out;
  std::istringstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(server::packet_record_from_json(line));
  }
  return out;
}

std::map<long long, std::uint64_t> channel_histogram(
    const std::vector<server::PacketRecord>& records) {
  std::map<long long, std::uint64_t> counts;
  for (const auto& r : records) {
    if (r.status == server::RowStatus::Rejected) continue;
    ++counts[r.frequency_hz];
  }
  return counts;
}

std::vector<DutyViolation> replay_duty_check(const std::vector<TxTrace>& trace,
                                             Microseconds window) {
  std::vector<DutyViolation> violations;
  std::map<std::pair<std::string, std::string>, std::vector<const TxTrace*>> groups;
  for (const auto& t : trace) groups[{t.source, t.ledger_key}].push_back(&t);

  for (auto& [key, list] : groups) {
    std::sort(list.begin(), list.end(), [](const TxTrace* a, const TxTrace* b) {
      return a->start < b->start;
    });
    Microseconds max_toa{0};
    for (const auto* t : list) max_toa = std::max(max_toa, t->toa);
    const Microseconds budget =
        Microseconds(window.count() / 1000 * list.front()->duty_permille);

    // Window anchors: for every transmission, the window ending at its
    // start must admit all airtime started inside it; the clipped-overlap
    // sum gets one frame of slack for a packet straddling the edge.
    for (std::size_t k = 0; k < list.size(); ++k) {
      const Microseconds end = list[k]->start;
      Microseconds started{0};
      Microseconds clipped{0};
      for (const auto* t : list) {
        if (t->start > end) break;
        if (t->start > end - window) started += t->toa;  // anchor included
        const Microseconds lo = std::max(t->start, end - window);
        const Microseconds hi = std::min(t->start + t->toa, end);
        if (hi > lo) clipped += hi - lo;
      }
      if (started > budget) {
        violations.push_back({key.first, key.second, end, started, budget});
      } else if (clipped > budget + max_toa) {
        violations.push_back({key.first, key.second, end, clipped, budget + max_toa});
      }
    }
  }
  return violations;
}

}  // namespace lorasim::sim
