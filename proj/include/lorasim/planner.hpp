#pragma once

#include <string>
#include <vector>

#include "lorasim/util.hpp"

namespace lorasim::plan {

struct WaitRow {
  int dr = 0;
  int payload_bytes = 0;  // application payload; the frame adds 13 bytes
  double toa_ms = 0;
  double wait_s = 0;
};

/// Pause table per data rate and application payload (payload steps of
/// 8 plus the per-rate maximum).
std::vector<WaitRow> wait_time_table(int duty_permille);

/// Pause after one frame of the given raw PHY payload length.
double wait_seconds(int dr, int phy_payload_len, int duty_permille);

struct DailyRow {
  int dr = 0;
  long long bytes_per_day = 0;
};

enum class DailyMethod {
  AirtimeBudget,  // whole full-size frames inside the daily airtime budget
  Bitrate,        // instantaneous bitrate times budget, payload fraction
};

std::vector<DailyRow> daily_data_table(int duty_permille,
                                       DailyMethod method = DailyMethod::AirtimeBudget);

struct CapacityInputs {
  double r_packets_per_day = 0;   // packets/day requiring a response
  double er_packets_per_day = 0;  // edge packets/day requiring a response
  int channels = 1;               // parallel demodulators at the gateway
  double seconds_per_transaction = 2.0;
};

/// Daily transaction budget divided by the weighted packet demand,
/// floored. Edge packets cost double.
long long node_capacity(const CapacityInputs& in);

std::string to_csv(const std::vector<WaitRow>& rows);
std::string to_csv(const std::vector<DailyRow>& rows);

}  // namespace lorasim::plan
