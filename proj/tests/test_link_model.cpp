#include "doctest.h"
#include "lorasim/link_model.hpp"
#include "lorasim/util.hpp"

#include <cmath>

using namespace lorasim;
using namespace lorasim::link;

TEST_SUITE("link_model") {

TEST_CASE("path loss reference point") {
  Environment env;
  env.shadowing_sigma_db = 0;
  CHECK(path_loss_db(env, {0, 0, 0}, {1, 0, 0}, {}, 0.0) == doctest::Approx(40.0));
}

TEST_CASE("path loss at 42 m indoor, same floor") {
  Environment env;  // generic indoor defaults
  const double loss = path_loss_db(env, {0, 0, 0}, {42, 0, 0}, {}, 0.0);
  CHECK(loss == doctest::Approx(87.07).epsilon(0.01));
}

TEST_CASE("doubling the distance adds 10*n*log10(2)") {
  Environment env;
  for (double d : {3.0, 10.0, 57.0}) {
    const double a = path_loss_db(env, {0, 0, 0}, {d, 0, 0}, {}, 0.0);
    const double b = path_loss_db(env, {0, 0, 0}, {2 * d, 0, 0}, {}, 0.0);
    CHECK(b - a == doctest::Approx(10.0 * env.path_loss_exponent * std::log10(2.0)));
  }
}

TEST_CASE("obstacle terms add up") {
  Environment env;
  const double base = path_loss_db(env, {0, 0, 0}, {10, 0, 0}, {}, 0.0);
  const double loaded =
      path_loss_db(env, {0, 0, 0}, {10, 0, 0}, {2, 3, true}, 0.0);
  CHECK(loaded - base ==
        doctest::Approx(2 * env.floor_penetration_db + 3 * env.wall_penetration_db +
                        env.basement_extra_db));
  CHECK_THROWS_AS(path_loss_db(env, {1, 1, 1}, {1, 1, 1}, {}, 0.0), std::invalid_argument);
}

TEST_CASE("antenna gain peaks at the 3 dBi setting") {
  CHECK(effective_antenna_gain_db(3.0) == doctest::Approx(3.0));
  CHECK(effective_antenna_gain_db(0.0) == doctest::Approx(0.0));
  CHECK(effective_antenna_gain_db(6.0) == doctest::Approx(0.0));
  for (double g = -20; g <= 20; g += 0.5) {
    if (g == 3.0) continue;
    CHECK(effective_antenna_gain_db(g) < effective_antenna_gain_db(3.0));
    CHECK(effective_antenna_gain_db(3.0 - g) ==
          doctest::Approx(effective_antenna_gain_db(3.0 + g)));
  }
  CHECK(effective_antenna_gain_db(-128.0) == doctest::Approx(-30.0));
  CHECK_THROWS_AS(effective_antenna_gain_db(-129.0), std::invalid_argument);
  CHECK_THROWS_AS(effective_antenna_gain_db(128.0), std::invalid_argument);
}

TEST_CASE("rssi arithmetic") {
  CHECK(rssi_dbm(14, 3, 0, 100) == doctest::Approx(-83.0));
  // +5 dB tx power moves rssi by exactly +5 dB
  CHECK(rssi_dbm(19, 3, 0, 100) - rssi_dbm(14, 3, 0, 100) == doctest::Approx(5.0));
  CHECK(reported_rssi_dbm(-83.4) == -83);
  CHECK(reported_rssi_dbm(-83.6) == -84);
}

TEST_CASE("snr and the reporting clamp") {
  CHECK(noise_floor_dbm(125000, 6.0) == doctest::Approx(-117.03).epsilon(0.001));
  CHECK(true_snr_db(-85, 125000, 6.0) == doctest::Approx(32.03).epsilon(0.001));
  CHECK(reported_snr_db(32.03) == doctest::Approx(12.5));
  CHECK(true_snr_db(-117.06, 125000, 6.0) == doctest::Approx(0.0).epsilon(0.05));
  CHECK(reported_snr_db(-12.9) == doctest::Approx(-12.9));
  CHECK(reported_snr_db(-40.0) == doctest::Approx(-25.0));
  for (double snr : {-100.0, -3.0, 7.0, 80.0}) {
    CHECK(reported_snr_db(snr) <= 12.5);
  }
}

TEST_CASE("sensitivity and demodulation floors") {
  CHECK(sensitivity_dbm(7) == doctest::Approx(-117.0));
  CHECK(sensitivity_dbm(12) == doctest::Approx(-129.5));
  CHECK(demod_floor_db(7) == doctest::Approx(-7.5));
  CHECK(demod_floor_db(12) == doctest::Approx(-20.0));
}

TEST_CASE("reception is certain deep inside the thresholds") {
  util::Rng rng(4);
  int received = 0;
  const int floors = -7;  // sf7 floor -7.5, +30 dB margin
  for (int i = 0; i < 2000; ++i) {
    received += receive_decision(-80, floors + 30.0 + 7.5, 7, rng) ? 1 : 0;
  }
  CHECK(received == 2000);
}

TEST_CASE("reception probability is one half exactly at the floor") {
  util::Rng rng(11);
  int received = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    received += receive_decision(-100, demod_floor_db(9), 9, rng) ? 1 : 0;
  }
  // logistic midpoint; 10^5 draws keep the estimate within ~0.5%
  CHECK(received > n / 2 - n / 100);
  CHECK(received < n / 2 + n / 100);
}

TEST_CASE("hard sensitivity gate") {
  util::Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    CHECK_FALSE(receive_decision(sensitivity_dbm(10) - 0.1,
                                 true_snr_db(sensitivity_dbm(10) - 0.1, 125000, 6), 10,
                                 rng));
  }
}

TEST_CASE("loss rate shrinks with the spreading factor on a marginal link") {
  // fixed marginal link: rssi just above the sf7 sensitivity
  const double rssi = -116.9;
  const double snr = true_snr_db(rssi, 125000, 6.0);
  int k7 = 0, k12 = 0;
  const int n = 1000;
  util::Rng rng7(21), rng12(22);
  for (int i = 0; i < n; ++i) {
    k7 += receive_decision(rssi, snr, 7, rng7) ? 0 : 1;
    k12 += receive_decision(rssi, snr, 12, rng12) ? 0 : 1;
  }
  CHECK(k12 <= k7);
  // one-sided exact binomial comparison: under equal rates, losses split
  // evenly between the two runs; reject at alpha = 0.01
  const int total = k7 + k12;
  double tail = 0.0;
  for (int x = k7; x <= total; ++x) {
    double log_term = 0.0;
    for (int j = 1; j <= total; ++j) {
      log_term += std::log(static_cast<double>(j));
      if (j <= x) log_term -= std::log(static_cast<double>(j));
      if (j <= total - x) log_term -= std::log(static_cast<double>(j));
    }
    tail += std::exp(log_term - total * std::log(2.0));
  }
  CHECK(tail < 0.01);
}

TEST_CASE("collision rule") {
  auto tx = [](const char* src, long long ch, int sf, long long start, long long toa) {
    Transmission t;
    t.source = src;
    t.channel_hz = ch;
    t.sf = sf;
    t.start = Microseconds(start);
    t.toa = Microseconds(toa);
    return t;
  };
  const auto a = tx("a", 868100000, 7, 0, 1000);
  SUBCASE("same channel, different sf: orthogonal") {
    CHECK_FALSE(collide(a, tx("b", 868100000, 12, 500, 1000)));
  }
  SUBCASE("same channel, same sf, overlapping") {
    CHECK(collide(a, tx("b", 868100000, 7, 500, 1000)));
  }
  SUBCASE("same sf, different channels") {
    CHECK_FALSE(collide(a, tx("b", 868300000, 7, 500, 1000)));
  }
  SUBCASE("touching intervals do not overlap") {
    CHECK_FALSE(collide(a, tx("b", 868100000, 7, 1000, 1000)));
  }
  SUBCASE("irreflexive") { CHECK_FALSE(collide(a, a)); }
  SUBCASE("symmetric on random pairs") {
    util::Rng rng(3);
    for (int i = 0; i < 500; ++i) {
      const auto x = tx("x", 868100000 + 200000 * rng.uniform_index(3),
                        7 + static_cast<int>(rng.uniform_index(6)),
                        rng.uniform_index(5000), 1 + rng.uniform_index(3000));
      const auto y = tx("y", 868100000 + 200000 * rng.uniform_index(3),
                        7 + static_cast<int>(rng.uniform_index(6)),
                        rng.uniform_index(5000), 1 + rng.uniform_index(3000));
      CHECK(collide(x, y) == collide(y, x));
    }
  }
}

}  // TEST_SUITE
