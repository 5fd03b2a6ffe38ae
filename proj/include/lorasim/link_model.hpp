#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lorasim/util.hpp"

namespace lorasim::link {

struct Position {
  double x = 0, y = 0, z = 0;
};

double distance_m(const Position& a, const Position& b);

/// Propagation parameters. Defaults are the generic indoor values; the
/// shipped scenario presets override them with their calibrated
/// constants.
struct Environment {
  double path_loss_exponent = 2.9;
  double reference_loss_db = 40.0;     // at 1 m
  double floor_penetration_db = 15.0;  // per concrete slab
  double wall_penetration_db = 5.0;
  double basement_extra_db = 20.0;
  double shadowing_sigma_db = 2.0;     // log-normal, frozen per link
  double noise_figure_db = 6.0;
};

struct Obstacles {
  int floors = 0;
  int walls = 0;
  bool basement = false;
};

/// Log-distance loss plus obstacle terms plus the (externally drawn,
/// frozen) shadowing sample. Throws on zero distance.
double path_loss_db(const Environment& env, const Position& a, const Position& b,
                    const Obstacles& obs, double shadowing_db);

/// Empirical isotropic-antenna fit: peak at the 3 dBi setting, symmetric
/// decline on both sides, clamped at -30 dB. Accepted setting range is
/// the device's -128..127 dBi.
double effective_antenna_gain_db(double gain_setting_dbi);

double rssi_dbm(double tx_power_dbm, double tx_gain_db, double rx_gain_db, double loss_db);
int reported_rssi_dbm(double rssi);

double noise_floor_dbm(long bw_hz, double noise_figure_db);
double true_snr_db(double rssi, long bw_hz, double noise_figure_db);

/// What the demodulator reports: clamped to [-25, +12.5] dB.
double reported_snr_db(double true_snr);

double sensitivity_dbm(int sf);   // -(117 + 2.5 * (sf - 7))
double demod_floor_db(int sf);    // SF7 -7.5 ... SF12 -20

/// Per-packet reception decision: hard sensitivity gate plus an SNR gate
/// with one logistic margin draw (scale 2 dB) from the caller's stream.
bool receive_decision(double rssi, double true_snr, int sf, util::Rng& rng);

struct LinkSample {
  double rssi_dbm = 0;
  double snr_db = 0;
  bool received = false;
  bool collided = false;
};

/// One on-air radio event; the unit the duty ledger accounts and the
/// collision rule compares.
struct Transmission {
  std::string source;
  long long channel_hz = 0;
  int sf = 7;
  Microseconds start{0};
  Microseconds toa{0};
  double tx_power_dbm = 14.0;
  std::vector<std::uint8_t> frame;

  Microseconds end() const { return start + toa; }
};

/// Same channel, same SF, overlapping in time. Distinct spreading
/// factors never collide; both packets of a colliding pair are lost.
bool collide(const Transmission& a, const Transmission& b);

}  // namespace lorasim::link
