#include "lorasim/regulation.hpp"

#include <algorithm>
#include <cmath>

namespace lorasim::reg {

namespace {
// ETSI sub-band grouping for the 863-870 MHz band.
constexpr const char* kBandM = "865-868";        // 1%
constexpr const char* kBandL = "868.0-868.6";    // 1%
constexpr const char* kBandN = "868.7-869.2";    // 0.1%
constexpr const char* kBandP = "869.4-869.65";   // 10%

Channel make(long long hz, const char* band, int permille, double erp, bool mandatory) {
  Channel c;
  c.center_freq_hz = hz;
  c.sub_band = band;
  c.duty_permille = permille;
  c.max_erp_dbm = erp;
  c.mandatory = mandatory;
  return c;
}
}  // namespace

std::vector<Channel> eu868_plan() {
  return {
      make(868100000, kBandL, 10, 14.0, true),
      make(868300000, kBandL, 10, 14.0, true),
      make(868500000, kBandL, 10, 14.0, true),
      make(868850000, kBandN, 1, 14.0, false),
      make(869050000, kBandN, 1, 14.0, false),
      make(869525000, kBandP, 100, 27.0, false),
  };
}

std::vector<Channel> eu868_cf_list() {
  return {
      make(867100000, kBandM, 10, 14.0, false),
      make(867300000, kBandM, 10, 14.0, false),
      make(867500000, kBandM, 10, 14.0, false),
      make(867700000, kBandM, 10, 14.0, false),
      make(867900000, kBandM, 10, 14.0, false),
  };
}

std::vector<Channel> eu868_uplink_channels() {
  auto plan = eu868_plan();
  std::vector<Channel> out;
  for (const auto& c : plan) {
    if (c.sub_band == kBandL) out.push_back(c);  // the three mandatory rows
  }
  for (const auto& c : eu868_cf_list()) out.push_back(c);
  return out;
}

Channel eu868_rx2() { return make(869525000, kBandP, 100, 27.0, false); }

int to_permille(double duty_fraction) {
  if (!(duty_fraction > 0.0) || duty_fraction > 1.0) {
    throw std::invalid_argument("duty cycle must be in (0, 1]");
  }
  double scaled = duty_fraction * 1000.0;
  int permille = static_cast<int>(std::llround(scaled));
  if (permille < 1 || std::abs(scaled - permille) > 1e-6) {
    throw std::invalid_argument("duty cycle must be a multiple of 0.1%");
  }
  return permille;
}

Microseconds wait_after(Microseconds toa, int duty_permille) {
  if (duty_permille < 1 || duty_permille > 1000) {
    throw std::invalid_argument("duty permille must be in 1..1000");
  }
  if (toa.count() < 0) throw std::invalid_argument("toa must be >= 0");
  const std::int64_t num = toa.count() * (1000 - duty_permille);
  return Microseconds((num + duty_permille - 1) / duty_permille);  // round up
}

Microseconds wait_after(Microseconds toa, double duty_fraction) {
  return wait_after(toa, to_permille(duty_fraction));
}

std::optional<ErpViolation> check_erp(double tx_power_dbm, const Channel& ch) {
  if (tx_power_dbm <= ch.max_erp_dbm) return std::nullopt;
  return ErpViolation{ch.center_freq_hz, tx_power_dbm - ch.max_erp_dbm};
}

DutyLedger::DutyLedger(DutyAccounting mode, Microseconds window)
    : mode_(mode), window_(window) {
  if (window_.count() <= 0) throw std::invalid_argument("ledger window must be positive");
}

std::string DutyLedger::key_for(const Channel& ch) const {
  if (mode_ == DutyAccounting::PerSubBand) return ch.sub_band;
  return "ch:" + std::to_string(ch.center_freq_hz);
}

Microseconds DutyLedger::budget(const Channel& ch) const {
  return Microseconds(window_.count() / 1000 * ch.duty_permille);
}

const std::vector<DutyLedger::Entry>* DutyLedger::entries(const std::string& key) const {
  auto it = bands_.find(key);
  if (it == bands_.end()) return nullptr;
  return &it->second.entries;
}

Microseconds DutyLedger::earliest_start(const Channel& ch, Microseconds t,
                                        Microseconds toa) const {
  if (toa.count() <= 0) throw std::invalid_argument("toa must be positive");
  const Microseconds max_airtime = budget(ch);
  if (toa > max_airtime) {
    throw DutyExceeded("airtime " + std::to_string(toa.count()) +
                       "us exceeds duty budget of sub-band " + ch.sub_band);
  }

  auto it = bands_.find(key_for(ch));
  if (it == bands_.end()) return t;
  const BandState& band = it->second;

  Microseconds candidate = std::max(t, band.not_before);

  // Airtime started inside (candidate - window, candidate]; walk old
  // entries out of the window until the new transmission fits.
  Microseconds used{0};
  std::size_t oldest = 0;
  for (std::size_t i = 0; i < band.entries.size(); ++i) {
    if (band.entries[i].start > candidate - window_) {
      oldest = i;
      for (std::size_t j = i; j < band.entries.size(); ++j) used += band.entries[j].toa;
      break;
    }
    oldest = i + 1;
  }
  while (used + toa > max_airtime && oldest < band.entries.size()) {
    candidate = std::max(candidate, band.entries[oldest].start + window_);
    used -= band.entries[oldest].toa;
    ++oldest;
  }
  return candidate;
}

void DutyLedger::record(const Channel& ch, Microseconds start, Microseconds toa) {
  BandState& band = bands_[key_for(ch)];
  if (!band.entries.empty() && start < band.entries.back().start) {
    throw std::invalid_argument("ledger entries must be recorded in start order");
  }
  band.entries.push_back({start, toa});
  band.not_before = start + toa + wait_after(toa, ch.duty_permille);
  // Entries older than one window behind the newest start can never
  // influence a future admission; drop them.
  const Microseconds cutoff = start - window_;
  std::size_t keep = 0;
  while (keep < band.entries.size() && band.entries[keep].start <= cutoff) ++keep;
  if (keep > 0) band.entries.erase(band.entries.begin(), band.entries.begin() + keep);
}

Microseconds DutyLedger::reserve(const Channel& ch, Microseconds t, Microseconds toa) {
  const Microseconds start = earliest_start(ch, t, toa);
  record(ch, start, toa);
  return start;
}

}  // namespace lorasim::reg
