#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lorasim {

using Microseconds = std::chrono::microseconds;

inline double to_ms(Microseconds d) { return static_cast<double>(d.count()) / 1000.0; }
inline double to_s(Microseconds d) { return static_cast<double>(d.count()) / 1e6; }
inline Microseconds from_s(double s) {
  return Microseconds(static_cast<std::int64_t>(std::llround(s * 1e6)));
}

namespace util {

/// Deterministic stream generator (splitmix64). All randomness in the
/// simulator flows through this so runs are reproducible bit-for-bit on
/// any platform; std:: distributions are avoided on purpose.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1), both ends excluded (safe for log()).
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  /// Uniform index in [0, n).
  std::uint32_t uniform_index(std::uint32_t n) {
    return static_cast<std::uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Zero-mean normal via Box-Muller, two draws per call.
  double normal(double sigma) {
    double u1 = uniform_open();
    double u2 = uniform01();
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Zero-location logistic with the given scale.
  double logistic(double scale) {
    double u = uniform_open();
    return scale * std::log(u / (1.0 - u));
  }

 private:
  std::uint64_t state_;
};

/// Stable sub-stream seed from a master seed, a purpose tag and indices.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t a = 0, std::uint64_t b = 0);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);  // throws std::invalid_argument

}  // namespace util
}  // namespace lorasim
