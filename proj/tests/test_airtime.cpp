#include "doctest.h"
#include "lorasim/airtime.hpp"

#include <cstdint>

using namespace lorasim;
using namespace lorasim::airtime;

namespace {

// Independent airtime oracle: fills coded blocks one at a time instead
// of using the closed form. The first 8 payload symbols always run at
// rate 1/2 with sf-2 bits per symbol and carry the 20-bit header when
// the header is explicit; every further block of cr_denominator symbols
// carries 4*(sf - 2*ldro) payload bits.
std::int64_t oracle_toa_us(int sf, long bw, int cr, int pl, bool ldro_on,
                           bool explicit_header, bool crc_on, int preamble) {
  const long bits = 8L * pl + (crc_on ? 16 : 0);
  const long first_block_capacity = 4L * sf - 8 - (explicit_header ? 20 : 0);
  long remaining = bits - first_block_capacity;
  long blocks = 0;
  while (remaining > 0) {
    ++blocks;
    remaining -= 4L * (sf - (ldro_on ? 2 : 0));
  }
  const long data_symbols = 8 + blocks * cr;
  const std::int64_t tsym_us = (1000000LL << sf) / bw;
  // total = preamble + 4.25 + data symbols, in quarter symbols
  return tsym_us * (4L * (preamble + data_symbols) + 17) / 4;
}

bool oracle_ldro(int sf, long bw, Ldro mode) {
  if (mode == Ldro::On) return true;
  if (mode == Ldro::Off) return false;
  return (1000000LL << sf) / bw >= 16000;
}

}  // namespace

TEST_SUITE("airtime") {

TEST_CASE("symbol duration") {
  CHECK(symbol_duration({.sf = 7}) == Microseconds(1024));
  CHECK(symbol_duration({.sf = 12}) == Microseconds(32768));
  CHECK(symbol_duration({.sf = 9, .bw_hz = 250000}) == Microseconds(2048));
}

TEST_CASE("ldro auto threshold") {
  CHECK(ldro_active({.sf = 11}));
  CHECK(ldro_active({.sf = 12}));
  CHECK_FALSE(ldro_active({.sf = 10}));
  CHECK(ldro_active({.sf = 12, .bw_hz = 250000}));  // 16.384 ms symbols
  CHECK_FALSE(ldro_active({.sf = 11, .bw_hz = 250000}));
  CHECK(ldro_active({.sf = 7, .ldro = Ldro::On}));
}

TEST_CASE("reference durations") {
  RadioParams sf12;
  sf12.sf = 12;
  CHECK(time_on_air(sf12, 64) == Microseconds(2793472));
  CHECK(time_on_air(sf12, 13) == Microseconds(1155072));
  RadioParams sf7;
  CHECK(time_on_air(sf7, 0) == Microseconds(25856));
}

TEST_CASE("oracle equivalence over the full grid") {
  // 6 sf x 8 payloads x 4 cr x 3 ldro modes = 576 exact comparisons
  const int payloads[] = {0, 13, 26, 51, 64, 96, 109, 255};
  int cases = 0;
  for (int sf = 7; sf <= 12; ++sf) {
    for (int pl : payloads) {
      for (int cr = 5; cr <= 8; ++cr) {
        for (Ldro mode : {Ldro::Auto, Ldro::On, Ldro::Off}) {
          RadioParams p;
          p.sf = sf;
          p.cr_denominator = cr;
          p.ldro = mode;
          const auto expected = oracle_toa_us(sf, p.bw_hz, cr, pl,
                                              oracle_ldro(sf, p.bw_hz, mode), true, true, 8);
          CHECK(time_on_air(p, pl).count() == expected);
          ++cases;
        }
      }
    }
  }
  CHECK(cases == 576);
}

TEST_CASE("oracle equivalence for header and crc variants") {
  for (int sf : {7, 10, 12}) {
    for (int pl : {0, 10, 51, 200}) {
      for (bool eh : {true, false}) {
        for (bool crc : {true, false}) {
          RadioParams p;
          p.sf = sf;
          p.explicit_header = eh;
          p.crc_on = crc;
          const auto expected =
              oracle_toa_us(sf, p.bw_hz, 5, pl, oracle_ldro(sf, p.bw_hz, Ldro::Auto), eh,
                            crc, 8);
          CHECK(time_on_air(p, pl).count() == expected);
        }
      }
    }
  }
}

TEST_CASE("strictly longer per spreading factor step") {
  for (int pl : {0, 13, 51, 96, 242}) {
    for (int sf = 7; sf < 12; ++sf) {
      RadioParams lo, hi;
      lo.sf = sf;
      hi.sf = sf + 1;
      CHECK(time_on_air(hi, pl) > time_on_air(lo, pl));
    }
  }
}

TEST_CASE("payload growth comes in whole coded blocks") {
  for (int sf : {7, 9, 12}) {
    for (int cr : {5, 8}) {
      RadioParams p;
      p.sf = sf;
      p.cr_denominator = cr;
      const auto tsym = symbol_duration(p).count();
      auto prev = time_on_air(p, 0).count();
      for (int pl = 1; pl <= 255; ++pl) {
        const auto cur = time_on_air(p, pl).count();
        const auto diff = cur - prev;
        CHECK(diff >= 0);
        CHECK((diff == 0 || diff == cr * tsym));
        prev = cur;
      }
    }
  }
}

TEST_CASE("data rate mapping") {
  CHECK(dr_to_sf(5) == 7);
  CHECK(dr_to_sf(0) == 12);
  CHECK(dr_to_sf(3) == 9);
  for (int dr = 0; dr < kDataRateCount; ++dr) {
    CHECK(sf_to_dr(dr_to_params(dr).sf) == dr);
  }
  CHECK_THROWS_AS(dr_to_sf(6), std::invalid_argument);
  CHECK_THROWS_AS(dr_to_sf(-1), std::invalid_argument);
}

TEST_CASE("payload caps per data rate") {
  CHECK(max_app_payload(0) == 51);
  CHECK(max_app_payload(1) == 51);
  CHECK(max_app_payload(2) == 51);
  CHECK(max_app_payload(3) == 115);
  CHECK(max_app_payload(4) == 242);
  CHECK(max_app_payload(5) == 242);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(time_on_air({.sf = 13}, 10), std::invalid_argument);
  CHECK_THROWS_AS(time_on_air({.sf = 6}, 10), std::invalid_argument);
  CHECK_THROWS_AS(time_on_air({.bw_hz = 100000}, 10), std::invalid_argument);
  CHECK_THROWS_AS(time_on_air({.cr_denominator = 9}, 10), std::invalid_argument);
  RadioParams ok;
  CHECK_THROWS_AS(time_on_air(ok, -1), std::invalid_argument);
  CHECK_THROWS_AS(time_on_air(ok, 256), std::invalid_argument);
}

}  // TEST_SUITE
