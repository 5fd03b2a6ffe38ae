#include "doctest.h"
#include "lorasim/airtime.hpp"
#include "lorasim/regulation.hpp"
#include "lorasim/util.hpp"

using namespace lorasim;
using namespace lorasim::reg;

namespace {

Microseconds us(long long v) { return Microseconds(v); }

// Brute-force sliding-window audit used as the ledger oracle: for every
// entry, the window ending at its start must hold all airtime started
// inside it.
bool window_sums_ok(const std::vector<DutyLedger::Entry>& entries, int duty_permille,
                    Microseconds window) {
  const Microseconds budget = Microseconds(window.count() / 1000 * duty_permille);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Microseconds sum{0};
    for (std::size_t i = 0; i <= k; ++i) {
      if (entries[i].start > entries[k].start - window) sum += entries[i].toa;
    }
    if (sum > budget) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("regulation") {

TEST_CASE("eu868 plan matches the regulated table") {
  const auto plan = eu868_plan();
  REQUIRE(plan.size() == 6);
  CHECK(plan[0].center_freq_hz == 868100000);
  CHECK(plan[0].bw_hz == 125000);
  CHECK(plan[0].duty_permille == 10);
  CHECK(plan[0].max_erp_dbm == 14.0);
  CHECK(plan[1].center_freq_hz == 868300000);
  CHECK(plan[2].center_freq_hz == 868500000);
  CHECK(plan[3].center_freq_hz == 868850000);
  CHECK(plan[3].duty_permille == 1);
  CHECK(plan[4].center_freq_hz == 869050000);
  CHECK(plan[5].center_freq_hz == 869525000);
  CHECK(plan[5].duty_permille == 100);
  CHECK(plan[5].max_erp_dbm == 27.0);
  int mandatory = 0;
  for (const auto& c : plan) mandatory += c.mandatory ? 1 : 0;
  CHECK(mandatory == 3);
  CHECK(eu868_uplink_channels().size() == 8);
}

TEST_CASE("wait_after") {
  CHECK(wait_after(us(2793472), 10) == us(276553728));  // ~276.55 s at 1%
  CHECK(wait_after(us(1155072), 10) == us(114352128));  // ~114.35 s
  CHECK(wait_after(us(25856), 10) == us(2559744));      // ~2.56 s
  CHECK(wait_after(us(123456), 1000) == us(0));         // duty 1: no wait
  CHECK_THROWS_AS(wait_after(us(1000), 0), std::invalid_argument);
}

TEST_CASE("wait_after exact complement identity") {
  // wait + toa = toa / duty, exactly, for the plan's duty values
  for (int permille : {1, 10, 100, 1000}) {
    for (long long toa : {25856LL, 1155072LL, 2793472LL, 399616LL}) {
      const auto wait = wait_after(us(toa), permille);
      CHECK(wait.count() + toa == toa * 1000 / permille);
    }
  }
}

TEST_CASE("to_permille") {
  CHECK(to_permille(0.01) == 10);
  CHECK(to_permille(0.001) == 1);
  CHECK(to_permille(0.1) == 100);
  CHECK(to_permille(1.0) == 1000);
  CHECK_THROWS_AS(to_permille(0.0), std::invalid_argument);
  CHECK_THROWS_AS(to_permille(1.5), std::invalid_argument);
  CHECK_THROWS_AS(to_permille(0.0123), std::invalid_argument);
}

TEST_CASE("erp check") {
  const auto plan = eu868_plan();
  CHECK_FALSE(check_erp(14.0, plan[0]).has_value());
  CHECK_FALSE(check_erp(27.0, plan[5]).has_value());
  const auto v = check_erp(20.0, plan[0]);
  REQUIRE(v.has_value());
  CHECK(v->center_freq_hz == 868100000);
  CHECK(v->excess_db == doctest::Approx(6.0));
}

TEST_CASE("ledger: empty band admits immediately") {
  DutyLedger ledger;
  const auto ch = eu868_plan()[0];
  CHECK(ledger.earliest_start(ch, us(5'000'000), us(100'000)) == us(5'000'000));
}

TEST_CASE("ledger: the post-transmission pause is enforced") {
  DutyLedger ledger;
  const auto ch = eu868_plan()[0];  // 1%
  const auto toa = us(2793472);
  const auto granted = ledger.reserve(ch, us(0), toa);
  CHECK(granted == us(0));
  // immediately after the send ends: wait exactly toa*(1/d - 1)
  const auto next = ledger.earliest_start(ch, toa, toa);
  CHECK(next == toa + wait_after(toa, 10));
}

TEST_CASE("ledger: stale history under budget admits immediately") {
  DutyLedger ledger;
  const auto ch = eu868_plan()[0];
  ledger.record(ch, us(0), us(400'000));
  ledger.record(ch, us(400'000), us(400'000));  // back-to-back, installed directly
  const auto t = us(3'000'000'000);             // 50 minutes on
  CHECK(ledger.earliest_start(ch, t, us(400'000)) == t);
}

TEST_CASE("ledger: budget exhaustion pushes the start out") {
  DutyLedger ledger(DutyAccounting::PerSubBand, us(10'000'000));  // 10 s window
  Channel ch = eu868_plan()[0];                                   // 1% => 100 ms budget
  ledger.record(ch, us(0), us(60'000));
  ledger.record(ch, us(1'000'000), us(30'000));
  // 90 ms used; 20 ms more only fits once the first entry leaves the window
  const auto start = ledger.earliest_start(ch, us(2'000'000), us(20'000));
  CHECK(start == us(10'000'000));
}

TEST_CASE("ledger: single over-budget airtime is permanently rejected") {
  DutyLedger ledger(DutyAccounting::PerSubBand, us(1'000'000));
  Channel ch = eu868_plan()[0];  // 1% of 1 s = 10 ms
  CHECK_THROWS_AS(ledger.earliest_start(ch, us(0), us(20'000)), DutyExceeded);
}

TEST_CASE("ledger: sub-band vs per-channel accounting") {
  const auto plan = eu868_plan();
  const auto toa = us(1'000'000);
  SUBCASE("sub-band: sister channel shares the budget") {
    DutyLedger ledger(DutyAccounting::PerSubBand);
    ledger.reserve(plan[0], us(0), toa);
    CHECK(ledger.earliest_start(plan[1], toa, toa) > toa);  // 868.3 shares g1
  }
  SUBCASE("per-channel: sister channel is independent") {
    DutyLedger ledger(DutyAccounting::PerChannel);
    ledger.reserve(plan[0], us(0), toa);
    CHECK(ledger.earliest_start(plan[1], toa, toa) == toa);
  }
}

TEST_CASE("ledger: earliest_start is monotone in the query time") {
  util::Rng rng(99);
  DutyLedger ledger;
  const auto plan = eu868_plan();
  Microseconds t{0};
  for (int i = 0; i < 40; ++i) {
    const auto& ch = plan[rng.uniform_index(3)];
    const auto toa = us(100'000 + rng.uniform_index(2'000'000));
    t = ledger.reserve(ch, t + us(rng.uniform_index(10'000'000)), toa) + toa;
  }
  const auto& ch = plan[0];
  Microseconds prev = ledger.earliest_start(ch, t, us(500'000));
  for (int i = 1; i <= 20; ++i) {
    const auto q = t + us(60'000'000LL * i);
    const auto r = ledger.earliest_start(ch, q, us(500'000));
    CHECK(r >= q);
    CHECK(r >= prev);
    prev = r;
  }
}

TEST_CASE("ledger: random reservation sequences satisfy the window audit") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    util::Rng rng(seed);
    DutyLedger ledger;
    const auto plan = eu868_plan();
    Microseconds t{0};
    for (int i = 0; i < 300; ++i) {
      const auto& ch = plan[rng.uniform_index(static_cast<std::uint32_t>(plan.size()))];
      const auto toa = us(10'000 + rng.uniform_index(3'000'000));
      const auto granted = ledger.reserve(ch, t, toa);
      CHECK(granted >= t);
      t = granted;  // queries move forward with the grants
      if (rng.uniform01() < 0.3) t += us(rng.uniform_index(120'000'000));
    }
    for (const auto& ch : plan) {
      const auto* entries = ledger.entries(ledger.key_for(ch));
      if (entries) CHECK(window_sums_ok(*entries, ch.duty_permille, ledger.window()));
    }
  }
}

TEST_CASE("ledger: record rejects out-of-order starts") {
  DutyLedger ledger;
  const auto ch = eu868_plan()[0];
  ledger.record(ch, us(1'000'000), us(1000));
  CHECK_THROWS_AS(ledger.record(ch, us(500'000), us(1000)), std::invalid_argument);
}

}  // TEST_SUITE
