#include <cmath>

#include "lorasim/sim_engine.hpp"

namespace lorasim::sim {

namespace {

// Per-data-rate datagram periods that respect the 1% budget of the
// meter traffic (the DR0..2 datagrams go out as two fragments).
constexpr double kMeterPeriodByDr[6] = {600, 320, 150, 65, 40, 30};

link::Position at(double x, double y, double z) { return {x, y, z}; }

}  // namespace

Scenario indoor_building_scenario() {
  Scenario s;
  s.name = "indoor-sciencepark3";
  s.seed = 1;
  s.duration_s = 6 * 3600.0;  // one hour per data rate

  // Calibrated office-building propagation. Shadowing is folded into
  // the per-position obstacle counts so the sweep is reproducible; the
  // logistic reception margin stays the stochastic term.
  s.environment.path_loss_exponent = 2.9;
  s.environment.reference_loss_db = 40.0;
  s.environment.floor_penetration_db = 12.0;
  s.environment.wall_penetration_db = 5.0;
  s.environment.basement_extra_db = 20.0;
  s.environment.shadowing_sigma_db = 0.0;

  GatewaySpec gw;
  gw.id = "gw0";
  gw.position = at(0, 0, 0);  // second floor of the nine-storey building
  s.gateways.push_back(gw);

  struct Spot {
    const char* tag;
    double dist;
    int dz_floors;  // vertical offset in floors, 3 m each
    link::Obstacles obs;
  };
  const Spot spots[9] = {
      {"p1", 51, 4, {4, 0, false}},   // floor 6
      {"p2", 45, 2, {2, 0, false}},   // floor 4
      {"p3", 40, 0, {0, 3, false}},   // same floor, left wing
      {"p4", 42, 0, {0, 3, false}},   // same floor, right wing
      {"p5", 48, -2, {2, 0, false}},  // mezzanine
      {"p6", 20, -3, {0, 0, false}},  // ground floor atrium, line of sight
      {"p7", 26, -3, {3, 0, true}},   // basement, near stairwell
      {"p8", 60, -3, {3, 2, true}},   // basement, far end
      {"p9", 55, -3, {3, 2, true}},   // basement, far end
  };

  std::size_t eui = 1;
  for (int dr = 0; dr < 6; ++dr) {
    const double hour_start = dr * 3600.0;
    for (int p = 0; p < 9; ++p) {
      const Spot& spot = spots[p];
      NodeSpec n;
      n.name = std::string(spot.tag) + "-dr" + std::to_string(dr);
      n.dev_eui = 0x5350330000000000ull + eui++;
      const double dz = spot.dz_floors * 3.0;
      const double horiz = std::sqrt(std::max(1.0, spot.dist * spot.dist - dz * dz));
      n.position = at(horiz, 0, dz);
      n.obstacles = spot.obs;
      n.activation = mac::Activation::Abp;
      n.dr = dr;
      n.period_s = kMeterPeriodByDr[dr];
      n.jitter_frac = 0.0;               // the stagger below is the schedule
      n.phase_s = p * n.period_s / 9.0;  // collision-free lattice
      n.payload = PayloadKind::Meter;
      n.confirmed = false;
      n.start_s = hour_start;
      n.stop_s = hour_start + 3600.0;
      s.nodes.push_back(std::move(n));
    }
  }
  return s;
}

Scenario outdoor_scenario() {
  Scenario s;
  s.name = "outdoor-hagenberg";
  s.seed = 7;
  s.duration_s = 6 * 3600.0;

  // Suburban fit: campus gateway above the rooftops, sites below.
  s.environment.path_loss_exponent = 3.5;
  s.environment.reference_loss_db = 40.0;
  s.environment.wall_penetration_db = 7.0;  // obstructed site: buildings + trees
  s.environment.shadowing_sigma_db = 0.0;

  GatewaySpec gw;
  gw.id = "gw0";
  gw.position = at(0, 0, 20);
  s.gateways.push_back(gw);

  struct Site {
    const char* tag;
    double dist;
    double z;
    int walls;
  };
  const Site sites[3] = {
      {"site1", 151.14, 6, 0},  // close, clear
      {"site2", 635.8, -15, 1}, // lower ground, buildings and trees
      {"site3", 845.0, 14, 0},  // far, clear
  };

  // Each data-rate hour splits into six ten-minute sessions per site;
  // the node rejoins at every session start, the way the field campaign
  // reconfigured and restarted the device between tests.
  constexpr int kSessions = 6;
  constexpr double kSessionLen = 600.0;
  std::size_t eui = 1;
  for (int dr = 0; dr < 6; ++dr) {
    const double hour_start = dr * 3600.0;
    for (int i = 0; i < 3; ++i) {
      const Site& site = sites[i];
      for (int session = 0; session < kSessions; ++session) {
        NodeSpec n;
        n.name = std::string(site.tag) + "-dr" + std::to_string(dr) + "-s" +
                 std::to_string(session);
        n.dev_eui = 0x4841470000000000ull + eui++;
        const double dz = site.z - 20.0;
        const double horiz = std::sqrt(std::max(1.0, site.dist * site.dist - dz * dz));
        n.position = at(horiz, 0, site.z);
        n.obstacles = {0, site.walls, false};
        n.activation = mac::Activation::Otaa;
        n.join_dr = 0;
        n.dr = dr;
        n.period_s = kMeterPeriodByDr[dr];
        n.jitter_frac = 0.0;
        n.phase_s = 30.0 + i * std::min(n.period_s, kSessionLen) / 3.0;
        n.payload = PayloadKind::Meter;
        n.confirmed = false;
        n.start_s = hour_start + session * kSessionLen;
        n.stop_s = n.start_s + kSessionLen;
        s.nodes.push_back(std::move(n));
      }
    }
  }
  return s;
}

Scenario contention_scenario(mac::DeviceClass measured_class) {
  Scenario s;
  switch (measured_class) {
    case mac::DeviceClass::A: s.name = "ack-contention-a"; break;
    case mac::DeviceClass::B: s.name = "ack-contention-b"; break;
    case mac::DeviceClass::C: s.name = "ack-contention-c"; break;
  }
  s.seed = 17;
  s.duration_s = 1800.0;
  s.environment.path_loss_exponent = 2.0;
  s.environment.reference_loss_db = 40.0;
  s.environment.shadowing_sigma_db = 0.0;

  GatewaySpec gw;
  gw.id = "gw0";
  gw.position = at(0, 0, 15);
  s.gateways.push_back(gw);

  const int kMeasured = 4;
  const int kBackground = 44;
  for (int i = 0; i < kMeasured + kBackground; ++i) {
    NodeSpec n;
    const bool measured = i < kMeasured;
    n.name = std::string(measured ? "meas" : "load") +
             std::to_string(measured ? i : i - kMeasured);
    n.dev_eui = 0x41434b0000000000ull + i + 1;
    const double angle = 2.0 * 3.14159265358979 * i / (kMeasured + kBackground);
    n.position = at(80.0 * std::cos(angle), 80.0 * std::sin(angle), 1.5);
    n.activation = mac::Activation::Abp;
    n.dev_class = measured ? measured_class : mac::DeviceClass::A;
    n.dr = 5;
    n.period_s = 30.0;
    n.jitter_frac = 0.05;
    n.confirmed = true;
    n.retry_limit = 0;
    n.payload = PayloadKind::Raw;
    n.raw_payload_size = 12;
    s.nodes.push_back(std::move(n));
  }
  return s;
}

std::vector<std::string> contention_measured_nodes() {
  return {"meas0", "meas1", "meas2", "meas3"};
}

Scenario preset(const std::string& name) {
  if (name == "indoor-sciencepark3") return indoor_building_scenario();
  if (name == "outdoor-hagenberg") return outdoor_scenario();
  if (name == "ack-contention-a") return contention_scenario(mac::DeviceClass::A);
  if (name == "ack-contention-b") return contention_scenario(mac::DeviceClass::B);
  if (name == "ack-contention-c") return contention_scenario(mac::DeviceClass::C);
  throw ScenarioError("unknown preset: " + name);
}

std::vector<std::string> preset_names() {
  return {"indoor-sciencepark3", "outdoor-hagenberg", "ack-contention-a",
          "ack-contention-b", "ack-contention-c"};
}

}  // namespace lorasim::sim
