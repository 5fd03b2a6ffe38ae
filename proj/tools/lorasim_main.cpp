#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lorasim/airtime.hpp"
#include "lorasim/planner.hpp"
#include "lorasim/regulation.hpp"
#include "lorasim/sim_engine.hpp"

namespace {

using namespace lorasim;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_toa(int sf, long bw, int cr, int payload, const std::string& ldro, int preamble,
            bool implicit_header, bool no_crc) {
  airtime::RadioParams p;
  p.sf = sf;
  p.bw_hz = bw;
  p.cr_denominator = cr;
  p.preamble_symbols = preamble;
  p.explicit_header = !implicit_header;
  p.crc_on = !no_crc;
  if (ldro == "auto") {
    p.ldro = airtime::Ldro::Auto;
  } else if (ldro == "on") {
    p.ldro = airtime::Ldro::On;
  } else if (ldro == "off") {
    p.ldro = airtime::Ldro::Off;
  } else {
    throw CLI::ValidationError("--ldro must be auto, on or off");
  }
  const auto toa = airtime::time_on_air(p, payload);
  std::printf("toa_ms: %.3f\n", to_ms(toa));
  for (int permille : {1, 10, 100}) {
    std::printf("wait_s@%.1f%%: %.3f\n", permille / 10.0,
                to_s(reg::wait_after(toa, permille)));
  }
  return kExitOk;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_file(out_path, text);
  }
}

std::string default_out_dir() {
  const char* env = std::getenv("LORASIM_OUT_DIR");
  return env && *env ? env : ".";
}

int run_simulate(const std::string& preset_name, const std::string& scenario_path,
                 std::int64_t seed, const std::string& out_dir,
                 const std::string& dump_scenario, bool with_trace) {
  sim::Scenario scenario;
  if (!preset_name.empty()) {
    scenario = sim::preset(preset_name);
  } else {
    scenario = sim::scenario_from_json(nlohmann::json::parse(read_file(scenario_path)));
  }
  if (seed >= 0) scenario.seed = static_cast<std::uint64_t>(seed);

  const auto errors = sim::validate(scenario);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "error: " << e << "\n";
    return kExitValidation;
  }

  if (!dump_scenario.empty()) {
    write_file(dump_scenario, sim::scenario_to_json(scenario).dump(2) + "\n");
    if (out_dir.empty()) return kExitOk;
  }

  const auto result = sim::run(scenario);
  const std::string dir = out_dir.empty() ? default_out_dir() : out_dir;
  write_file(dir + "/packets.jsonl", result.packet_log);
  write_file(dir + "/stats.json", sim::stats_to_json(result.stats).dump(2) + "\n");
  if (with_trace) {
    std::string trace;
    for (const auto& t : result.trace) {
      nlohmann::ordered_json j;
      j["source"] = t.source;
      j["ledger_key"] = t.ledger_key;
      j["frequency_mhz"] = static_cast<double>(t.channel_hz) / 1e6;
      j["sf"] = t.sf;
      j["start_us"] = t.start.count();
      j["toa_us"] = t.toa.count();
      j["duty_permille"] = t.duty_permille;
      trace += j.dump() + "\n";
    }
    write_file(dir + "/trace.jsonl", trace);
  }
  std::cerr << "wrote " << dir << "/packets.jsonl and stats.json\n";
  return kExitOk;
}

int run_report(const std::string& log_path, const std::string& metric,
               const std::string& stats_path) {
  const auto records = sim::parse_log(read_file(log_path));

  nlohmann::json stats;
  const std::string sidecar = stats_path.empty() ? log_path + ".stats.json" : stats_path;
  if (std::ifstream probe(sidecar); probe.good()) {
    stats = nlohmann::json::parse(read_file(sidecar));
  }

  if (metric == "channels") {
    const auto counts = sim::channel_histogram(records);
    std::printf("frequency_mhz,count\n");
    for (const auto& [hz, count] : counts) {
      std::printf("%.1f,%llu\n", static_cast<double>(hz) / 1e6,
                  static_cast<unsigned long long>(count));
    }
    return kExitOk;
  }

  // per-node aggregation from the log rows
  struct NodeAgg {
    std::uint64_t received = 0;
    std::uint16_t min_fcnt = 0xffff, max_fcnt = 0;
    std::vector<double> rssi, snr;
  };
  std::map<std::string, NodeAgg> agg;
  char eui[17];
  for (const auto& r : records) {
    if (r.status == server::RowStatus::Rejected || r.ftype == server::FrameKind::Join) {
      continue;
    }
    if (r.status != server::RowStatus::Accepted) continue;
    std::snprintf(eui, sizeof eui, "%016llx", static_cast<unsigned long long>(r.dev_eui));
    auto& a = agg[eui];
    ++a.received;
    a.min_fcnt = std::min(a.min_fcnt, r.fcnt);
    a.max_fcnt = std::max(a.max_fcnt, r.fcnt);
    a.rssi.push_back(r.rssi_dbm);
    a.snr.push_back(r.snr_db);
  }

  // stats sidecar gives true sent counts and names; the log alone can
  // only estimate sent from the frame counter span
  struct SideInfo {
    std::string name;
    std::uint64_t sent = 0, confirmed_sent = 0, ack_missed = 0;
    bool present = false;
  };
  std::map<std::string, SideInfo> side;
  if (!stats.is_null()) {
    for (const auto& n : stats.at("nodes")) {
      SideInfo info;
      info.name = n.at("name").get<std::string>();
      info.sent = n.at("sent").get<std::uint64_t>();
      info.confirmed_sent = n.at("confirmed_sent").get<std::uint64_t>();
      info.ack_missed = n.at("ack_missed").get<std::uint64_t>();
      info.present = true;
      side[n.at("dev_eui").get<std::string>()] = info;
    }
  }
  auto display_name = [&](const std::string& dev_eui) {
    auto it = side.find(dev_eui);
    return it != side.end() && !it->second.name.empty() ? it->second.name : dev_eui;
  };

  if (metric == "per") {
    std::printf("node,sent,received,per_percent\n");
    std::set<std::string> shown;
    for (const auto& [dev_eui, a] : agg) {
      std::uint64_t sent = a.received == 0 ? 0 : a.max_fcnt - a.min_fcnt + 1;
      if (auto it = side.find(dev_eui); it != side.end()) sent = it->second.sent;
      const double per =
          sent == 0 ? 0.0
                    : 100.0 * static_cast<double>(sent - a.received) / static_cast<double>(sent);
      std::printf("%s,%llu,%llu,%.2f\n", display_name(dev_eui).c_str(),
                  static_cast<unsigned long long>(sent),
                  static_cast<unsigned long long>(a.received), per);
      shown.insert(dev_eui);
    }
    // silent nodes exist only in the sidecar
    for (const auto& [dev_eui, info] : side) {
      if (shown.count(dev_eui) || info.sent == 0) continue;
      std::printf("%s,%llu,0,100.00\n", display_name(dev_eui).c_str(),
                  static_cast<unsigned long long>(info.sent));
    }
    return kExitOk;
  }
  if (metric == "rssi" || metric == "snr") {
    std::printf("node,count,min,q25,median,q75,max,mean\n");
    for (auto& [dev_eui, a] : agg) {
      const auto s = sim::summarize(metric == "rssi" ? a.rssi : a.snr);
      std::printf("%s,%llu,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f\n", display_name(dev_eui).c_str(),
                  static_cast<unsigned long long>(s.count), s.min, s.q25, s.median, s.q75,
                  s.max, s.mean);
    }
    return kExitOk;
  }
  if (metric == "ack") {
    if (stats.is_null()) {
      std::cerr << "error: the ack metric needs the stats file written by simulate\n";
      return kExitValidation;
    }
    std::printf("node,confirmed_sent,ack_missed,miss_percent\n");
    for (const auto& [dev_eui, info] : side) {
      const double pct = info.confirmed_sent == 0
                             ? 0.0
                             : 100.0 * static_cast<double>(info.ack_missed) /
                                   static_cast<double>(info.confirmed_sent);
      std::printf("%s,%llu,%llu,%.2f\n", info.name.c_str(),
                  static_cast<unsigned long long>(info.confirmed_sent),
                  static_cast<unsigned long long>(info.ack_missed), pct);
    }
    return kExitOk;
  }
  std::cerr << "error: unknown metric " << metric << "\n";
  return kExitUsage;
}

int run_validate(const std::string& scenario_path) {
  const auto scenario =
      sim::scenario_from_json(nlohmann::json::parse(read_file(scenario_path)));
  const auto errors = sim::validate(scenario);
  if (errors.empty()) {
    std::printf("ok\n");
    return kExitOk;
  }
  for (const auto& e : errors) std::cerr << "error: " << e << "\n";
  return kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRaWAN smart-meter network simulator and planning toolkit"};
  app.require_subcommand(1);

  // toa
  auto* toa = app.add_subcommand("toa", "time on air and duty-cycle wait for one frame");
  int sf = 7;
  long bw = 125000;
  int cr = 5;
  int payload = 0;
  std::string ldro = "auto";
  int preamble = 8;
  bool implicit_header = false, no_crc = false;
  toa->add_option("--sf", sf, "spreading factor 7..12")->required();
  toa->add_option("--payload", payload, "PHY payload length in bytes")->required();
  toa->add_option("--bw", bw, "bandwidth in Hz (125000/250000/500000)");
  toa->add_option("--cr", cr, "coding rate denominator 5..8");
  toa->add_option("--ldro", ldro, "low data rate optimization: auto|on|off");
  toa->add_option("--preamble", preamble, "preamble symbols");
  toa->add_flag("--implicit-header", implicit_header, "drop the explicit PHY header");
  toa->add_flag("--no-crc", no_crc, "disable the payload CRC");

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "planning tables (wait, daily, capacity)");
  plan_cmd->require_subcommand(1);
  double duty = 0.01;
  std::string out_path;
  auto* plan_wait = plan_cmd->add_subcommand("wait", "wait time per data rate and payload");
  plan_wait->add_option("--duty", duty, "duty cycle fraction, e.g. 0.01");
  plan_wait->add_option("--out", out_path, "write CSV here instead of stdout");
  auto* plan_daily = plan_cmd->add_subcommand("daily", "daily data volume per data rate");
  bool bitrate_method = false;
  plan_daily->add_option("--duty", duty, "duty cycle fraction, e.g. 0.01");
  plan_daily->add_option("--out", out_path, "write CSV here instead of stdout");
  plan_daily->add_flag("--bitrate-method", bitrate_method,
                       "bitrate x budget instead of whole-frame counting");
  auto* plan_cap = plan_cmd->add_subcommand("capacity", "node capacity of one gateway");
  double cap_r = 0, cap_er = 0, cap_spt = 2.0;
  int cap_channels = 1;
  plan_cap->add_option("--r", cap_r, "packets/day per node requiring a response")->required();
  plan_cap->add_option("--er", cap_er, "edge packets/day requiring a response");
  plan_cap->add_option("--channels", cap_channels, "gateway demodulator count");
  plan_cap->add_option("--seconds-per-transaction", cap_spt, "airtime per transaction");
  plan_cap->add_option("--out", out_path, "write CSV here instead of stdout");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "run a scenario or preset");
  std::string preset_name, scenario_path, out_dir, dump_scenario;
  std::int64_t seed = -1;
  bool with_trace = false;
  simulate->add_option("--preset", preset_name, "one of the shipped presets");
  simulate->add_option("--scenario", scenario_path, "scenario JSON file");
  simulate->add_option("--seed", seed, "override the scenario seed");
  simulate->add_option("--out", out_dir, "output directory (default $LORASIM_OUT_DIR or .)");
  simulate->add_option("--dump-scenario", dump_scenario,
                       "write the resolved scenario JSON to this path");
  simulate->add_flag("--trace", with_trace, "also write the transmission trace");

  // report
  auto* report = app.add_subcommand("report", "per-node tables from a packet log");
  std::string log_path, metric = "per", stats_path;
  report->add_option("--log", log_path, "packet log (JSONL)")->required();
  report->add_option("--metric", metric, "per|rssi|snr|ack|channels");
  report->add_option("--stats", stats_path, "stats file written by simulate");

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "check a scenario file");
  std::string validate_path;
  validate_cmd->add_option("--scenario", validate_path, "scenario JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (toa->parsed()) {
      return run_toa(sf, bw, cr, payload, ldro, preamble, implicit_header, no_crc);
    }
    if (plan_cmd->parsed()) {
      const int permille = reg::to_permille(duty);
      if (plan_wait->parsed()) {
        emit(plan::to_csv(plan::wait_time_table(permille)), out_path);
      } else if (plan_daily->parsed()) {
        emit(plan::to_csv(plan::daily_data_table(
                 permille, bitrate_method ? plan::DailyMethod::Bitrate
                                          : plan::DailyMethod::AirtimeBudget)),
             out_path);
      } else {
        plan::CapacityInputs in;
        in.r_packets_per_day = cap_r;
        in.er_packets_per_day = cap_er;
        in.channels = cap_channels;
        in.seconds_per_transaction = cap_spt;
        char buf[128];
        std::snprintf(buf, sizeof buf, "channels,r,er,max_nodes\n%d,%g,%g,%lld\n",
                      cap_channels, cap_r, cap_er, plan::node_capacity(in));
        emit(buf, out_path);
      }
      return kExitOk;
    }
    if (simulate->parsed()) {
      if (preset_name.empty() == scenario_path.empty()) {
        std::cerr << "error: give exactly one of --preset or --scenario\n";
        return kExitUsage;
      }
      if (std::getenv("LORASIM_CI") && seed < 0) {
        std::cerr << "error: --seed is required when LORASIM_CI is set\n";
        return kExitUsage;
      }
      return run_simulate(preset_name, scenario_path, seed, out_dir, dump_scenario,
                          with_trace);
    }
    if (report->parsed()) return run_report(log_path, metric, stats_path);
    if (validate_cmd->parsed()) return run_validate(validate_path);
  } catch (const sim::ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
