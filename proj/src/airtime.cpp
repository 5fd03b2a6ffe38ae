#include "lorasim/airtime.hpp"

#include <stdexcept>
#include <string>

namespace lorasim::airtime {

void validate(const RadioParams& p) {
  if (p.sf < 7 || p.sf > 12) throw std::invalid_argument("sf must be in 7..12");
  if (p.bw_hz != 125000 && p.bw_hz != 250000 && p.bw_hz != 500000) {
    throw std::invalid_argument("bw_hz must be 125000, 250000 or 500000");
  }
  if (p.cr_denominator < 5 || p.cr_denominator > 8) {
    throw std::invalid_argument("cr_denominator must be in 5..8");
  }
  if (p.preamble_symbols < 1 || p.preamble_symbols > 65535) {
    throw std::invalid_argument("preamble_symbols must be in 1..65535");
  }
}

bool ldro_active(const RadioParams& p) {
  switch (p.ldro) {
    case Ldro::On: return true;
    case Ldro::Off: return false;
    case Ldro::Auto: break;
  }
  return symbol_duration(p) >= Microseconds(16000);
}

Microseconds symbol_duration(const RadioParams& p) {
  validate(p);
  // 10^6 is divisible by every supported bandwidth, so this is exact.
  return Microseconds((1000000LL << p.sf) / p.bw_hz);
}

int payload_symbol_count(const RadioParams& p, int phy_payload_len) {
  validate(p);
  if (phy_payload_len < 0 || phy_payload_len > 255) {
    throw std::invalid_argument("phy payload must be 0..255 bytes");
  }
  const int de = ldro_active(p) ? 1 : 0;
  const long num = 8L * phy_payload_len - 4L * p.sf + 28 + (p.crc_on ? 16 : 0) -
                   (p.explicit_header ? 0 : 20);
  const long denom = 4L * (p.sf - 2 * de);
  const long blocks = num <= 0 ? 0 : (num + denom - 1) / denom;
  return static_cast<int>(8 + blocks * p.cr_denominator);
}

Microseconds time_on_air(const RadioParams& p, int phy_payload_len) {
  const int n_payload = payload_symbol_count(p, phy_payload_len);
  const std::int64_t tsym = symbol_duration(p).count();
  // total symbols = preamble + 4.25 + n_payload; tsym is a multiple of 4 us
  // for every sf/bw combination, so the 4.25 term stays exact.
  return Microseconds(tsym * (p.preamble_symbols + n_payload) + tsym * 17 / 4);
}

int dr_to_sf(int dr) {
  if (dr < 0 || dr >= kDataRateCount) throw std::invalid_argument("dr must be in 0..5");
  return 12 - dr;
}

int sf_to_dr(int sf) {
  if (sf < 7 || sf > 12) throw std::invalid_argument("sf must be in 7..12");
  return 12 - sf;
}

RadioParams dr_to_params(int dr) {
  RadioParams p;
  p.sf = dr_to_sf(dr);
  return p;
}

int max_app_payload(int dr) {
  if (dr < 0 || dr >= kDataRateCount) throw std::invalid_argument("dr must be in 0..5");
  if (dr <= 2) return 51;
  if (dr == 3) return 115;
  return 242;
}

}  // namespace lorasim::airtime
