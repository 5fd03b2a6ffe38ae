#include "lorasim/link_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lorasim::link {

double distance_m(const Position& a, const Position& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double path_loss_db(const Environment& env, const Position& a, const Position& b,
                    const Obstacles& obs, double shadowing_db) {
  const double d = distance_m(a, b);
  if (!(d > 0.0)) throw std::invalid_argument("path loss undefined at zero distance");
  double loss = env.reference_loss_db + 10.0 * env.path_loss_exponent * std::log10(d);
  loss += obs.floors * env.floor_penetration_db;
  loss += obs.walls * env.wall_penetration_db;
  if (obs.basement) loss += env.basement_extra_db;
  return loss + shadowing_db;
}

double effective_antenna_gain_db(double gain_setting_dbi) {
  if (gain_setting_dbi < -128.0 || gain_setting_dbi > 127.0) {
    throw std::invalid_argument("antenna gain setting must be in -128..127 dBi");
  }
  return std::max(3.0 - std::abs(gain_setting_dbi - 3.0), -30.0);
}

double rssi_dbm(double tx_power_dbm, double tx_gain_db, double rx_gain_db, double loss_db) {
  return tx_power_dbm + tx_gain_db + rx_gain_db - loss_db;
}

int reported_rssi_dbm(double rssi) { return static_cast<int>(std::lround(rssi)); }

double noise_floor_dbm(long bw_hz, double noise_figure_db) {
  if (bw_hz <= 0) throw std::invalid_argument("bandwidth must be positive");
  return -174.0 + 10.0 * std::log10(static_cast<double>(bw_hz)) + noise_figure_db;
}

double true_snr_db(double rssi, long bw_hz, double noise_figure_db) {
  return rssi - noise_floor_dbm(bw_hz, noise_figure_db);
}

double reported_snr_db(double true_snr) { return std::clamp(true_snr, -25.0, 12.5); }

double sensitivity_dbm(int sf) {
  if (sf < 7 || sf > 12) throw std::invalid_argument("sf must be in 7..12");
  return -(117.0 + 2.5 * (sf - 7));
}

double demod_floor_db(int sf) {
  if (sf < 7 || sf > 12) throw std::invalid_argument("sf must be in 7..12");
  return -(7.5 + 2.5 * (sf - 7));
}

bool receive_decision(double rssi, double true_snr, int sf, util::Rng& rng) {
  const double margin = rng.logistic(2.0);  // one draw per packet, fail or not
  if (rssi < sensitivity_dbm(sf)) return false;
  return true_snr >= demod_floor_db(sf) + margin;
}

bool collide(const Transmission& a, const Transmission& b) {
  if (&a == &b) return false;
  if (a.source == b.source && a.start == b.start) return false;  // same event
  if (a.channel_hz != b.channel_hz || a.sf != b.sf) return false;
  return a.start < b.end() && b.start < a.end();
}

}  // namespace lorasim::link
