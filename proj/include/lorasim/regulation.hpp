#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lorasim/util.hpp"

namespace lorasim::reg {

/// One regulated channel. Channels sharing a sub_band id share one duty
/// budget under the default accounting mode.
struct Channel {
  long long center_freq_hz = 0;
  long bw_hz = 125000;
  std::string sub_band;
  int duty_permille = 10;      // 10 = 1%, 1 = 0.1%, 100 = 10%
  double max_erp_dbm = 14.0;
  bool mandatory = false;

  double duty_cycle() const { return duty_permille / 1000.0; }
  double freq_mhz() const { return static_cast<double>(center_freq_hz) / 1e6; }
};

/// The six regulated EU868 rows; the first three are the mandatory join
/// channels.
std::vector<Channel> eu868_plan();

/// The five supporting uplink channels a join-accept adds (867.1..867.9,
/// 1% sub-band, 14 dBm).
std::vector<Channel> eu868_cf_list();

/// plan + cf-list: the full 8-channel uplink set of a joined device.
std::vector<Channel> eu868_uplink_channels();

/// 869.525 MHz / DR0, the fixed second receive window.
Channel eu868_rx2();

/// Duty as integer permille; throws unless the fraction is an exact
/// multiple of 0.1% in (0, 1].
int to_permille(double duty_fraction);

/// Pause required after a transmission: toa * (1/d - 1), exact for the
/// plan's duty values, rounded up otherwise.
Microseconds wait_after(Microseconds toa, int duty_permille);
Microseconds wait_after(Microseconds toa, double duty_fraction);

struct ErpViolation {
  long long center_freq_hz = 0;
  double excess_db = 0;
};

/// Empty result means compliant.
std::optional<ErpViolation> check_erp(double tx_power_dbm, const Channel& ch);

enum class DutyAccounting { PerSubBand, PerChannel };

struct DutyExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rolling duty accounting for one transmitter. Admission enforces both
/// the post-transmission backoff (toa/d - toa after each send on the
/// band) and a sliding-window budget (airtime started within the last
/// window <= duty * window).
class DutyLedger {
 public:
  struct Entry {
    Microseconds start{0};
    Microseconds toa{0};
  };

  explicit DutyLedger(DutyAccounting mode = DutyAccounting::PerSubBand,
                      Microseconds window = Microseconds(3'600'000'000LL));

  /// Smallest start time >= t at which the channel's budget admits a
  /// transmission of the given airtime. Throws DutyExceeded when the
  /// airtime alone exceeds duty * window (permanent rejection).
  Microseconds earliest_start(const Channel& ch, Microseconds t, Microseconds toa) const;

  /// Appends a transmission. Starts must be appended in non-decreasing
  /// order per accounting key.
  void record(const Channel& ch, Microseconds start, Microseconds toa);

  /// earliest_start + record in one step; returns the granted start.
  Microseconds reserve(const Channel& ch, Microseconds t, Microseconds toa);

  std::string key_for(const Channel& ch) const;
  Microseconds window() const { return window_; }
  DutyAccounting accounting() const { return mode_; }
  const std::vector<Entry>* entries(const std::string& key) const;

 private:
  struct BandState {
    std::vector<Entry> entries;
    Microseconds not_before{0};
  };

  Microseconds budget(const Channel& ch) const;

  DutyAccounting mode_;
  Microseconds window_;
  std::map<std::string, BandState> bands_;
};

}  // namespace lorasim::reg
