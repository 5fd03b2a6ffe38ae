#include "lorasim/planner.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "lorasim/airtime.hpp"
#include "lorasim/regulation.hpp"

namespace lorasim::plan {

std::vector<WaitRow> wait_time_table(int duty_permille) {
  std::vector<WaitRow> rows;
  for (int dr = 0; dr < airtime::kDataRateCount; ++dr) {
    const auto params = airtime::dr_to_params(dr);
    const int max_payload = airtime::max_app_payload(dr);
    for (int payload = 0; payload <= max_payload; payload += 8) {
      const auto toa =
          airtime::time_on_air(params, payload + airtime::kFrameOverheadBytes);
      rows.push_back({dr, payload, to_ms(toa), to_s(reg::wait_after(toa, duty_permille))});
    }
    if (max_payload % 8 != 0) {
      const auto toa =
          airtime::time_on_air(params, max_payload + airtime::kFrameOverheadBytes);
      rows.push_back(
          {dr, max_payload, to_ms(toa), to_s(reg::wait_after(toa, duty_permille))});
    }
  }
  return rows;
}

double wait_seconds(int dr, int phy_payload_len, int duty_permille) {
  const auto toa = airtime::time_on_air(airtime::dr_to_params(dr), phy_payload_len);
  return to_s(reg::wait_after(toa, duty_permille));
}

std::vector<DailyRow> daily_data_table(int duty_permille, DailyMethod method) {
  if (duty_permille < 0 || duty_permille > 1000) {
    throw std::invalid_argument("duty permille must be in 0..1000");
  }
  std::vector<DailyRow> rows;
  for (int dr = 0; dr < airtime::kDataRateCount; ++dr) {
    const auto params = airtime::dr_to_params(dr);
    const int payload = airtime::max_app_payload(dr);
    const int frame = payload + airtime::kFrameOverheadBytes;
    const double budget_s = 86400.0 * duty_permille / 1000.0;
    long long bytes = 0;
    if (duty_permille > 0) {
      const double toa_s = to_s(airtime::time_on_air(params, frame));
      if (method == DailyMethod::AirtimeBudget) {
        bytes = static_cast<long long>(std::floor(budget_s / toa_s)) *
                static_cast<long long>(payload);
      } else {
        // raw chirp bitrate scaled by the application fraction of the frame
        const int sf = params.sf;
        const double bitrate =
            sf * (4.0 / params.cr_denominator) *
            (static_cast<double>(params.bw_hz) / std::pow(2.0, sf));
        bytes = static_cast<long long>(
            std::floor(bitrate / 8.0 * budget_s * payload / frame));
      }
    }
    rows.push_back({dr, bytes});
  }
  return rows;
}

long long node_capacity(const CapacityInputs& in) {
  if (in.channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (in.seconds_per_transaction <= 0) {
    throw std::invalid_argument("seconds_per_transaction must be positive");
  }
  if (in.r_packets_per_day < 0 || in.er_packets_per_day < 0) {
    throw std::invalid_argument("packet demands must be >= 0");
  }
  const double demand = in.r_packets_per_day + 2.0 * in.er_packets_per_day;
  if (demand <= 0) throw std::invalid_argument("R + 2*ER must be positive");
  const double budget = in.channels * 86400.0 / in.seconds_per_transaction;
  return static_cast<long long>(std::floor(budget / demand));
}

std::string to_csv(const std::vector<WaitRow>& rows) {
  std::string out = "dr,payload_bytes,toa_ms,wait_s\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.3f,%.3f\n", r.dr, r.payload_bytes, r.toa_ms,
                  r.wait_s);
    out += buf;
  }
  return out;
}

std::string to_csv(const std::vector<DailyRow>& rows) {
  std::string out = "dr,bytes_per_day\n";
  char buf[48];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%lld\n", r.dr, r.bytes_per_day);
    out += buf;
  }
  return out;
}

}  // namespace lorasim::plan
