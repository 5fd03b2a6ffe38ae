#pragma once

#include "lorasim/util.hpp"

namespace lorasim::airtime {

enum class Ldro { Auto, On, Off };

/// LoRa modulation settings for one transmission.
struct RadioParams {
  int sf = 7;                  // spreading factor, 7..12
  long bw_hz = 125000;         // 125/250/500 kHz
  int cr_denominator = 5;      // 5..8, i.e. coding rate 4/5..4/8
  int preamble_symbols = 8;
  bool explicit_header = true;
  Ldro ldro = Ldro::Auto;      // Auto: on iff symbol duration >= 16 ms
  bool crc_on = true;
};

/// Throws std::invalid_argument when a field is outside its allowed range.
void validate(const RadioParams& p);

bool ldro_active(const RadioParams& p);

/// Chirp duration 2^sf / bw, exact in integer microseconds for the
/// supported bandwidths.
Microseconds symbol_duration(const RadioParams& p);

/// Number of payload symbols after the preamble (the 8 mandatory symbols
/// plus whole coded blocks).
int payload_symbol_count(const RadioParams& p, int phy_payload_len);

/// Full frame airtime: (preamble + 4.25 + payload symbols) * symbol time.
/// phy_payload_len is the PHY payload in bytes, 0..255.
Microseconds time_on_air(const RadioParams& p, int phy_payload_len);

constexpr int kDataRateCount = 6;     // EU868 DR0..DR5
constexpr int kFrameOverheadBytes = 13;

int dr_to_sf(int dr);  // DR0 -> SF12 ... DR5 -> SF7
int sf_to_dr(int sf);

/// 125 kHz, CR 4/5, explicit header, CRC on, LDRO auto.
RadioParams dr_to_params(int dr);

/// Largest application payload per data rate (frame overhead excluded).
int max_app_payload(int dr);

}  // namespace lorasim::airtime
