#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lorasim/util.hpp"

namespace lorasim::meter {

constexpr std::size_t kDatagramSize = 96;
constexpr std::size_t kFragmentSize = 51;
constexpr std::size_t kFragmentDataSize = 48;
constexpr int kReadingCount = 19;
constexpr int kFragmentCount = 2;

enum class MeterType : std::uint8_t { Electricity = 0, Gas = 1, Water = 2 };

struct CodecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : CodecError {
  using CodecError::CodecError;
};

/// The 96-byte application record, big-endian on the wire:
/// meter_id(8) seq(4) timestamp(4) type(1) flags(1) 19*reading(4) reserved(2).
struct MeterDatagram {
  std::uint64_t meter_id = 0;
  std::uint32_t datagram_seq = 0;
  std::uint32_t timestamp_s = 0;
  MeterType meter_type = MeterType::Electricity;
  std::uint8_t status_flags = 0;
  std::array<std::int32_t, kReadingCount> readings{};
};

std::array<std::uint8_t, kDatagramSize> encode(const MeterDatagram& d);
MeterDatagram decode(std::span<const std::uint8_t> bytes);  // throws CodecError

/// One of the two 51-byte wire pieces: id(2) header(1: index<<4|count)
/// data(48).
struct Fragment {
  std::uint16_t datagram_id = 0;
  std::uint8_t index = 0;
  std::uint8_t count = kFragmentCount;
  std::array<std::uint8_t, kFragmentDataSize> data{};
};

std::array<Fragment, kFragmentCount> make_fragments(std::uint32_t datagram_seq,
                                                    std::span<const std::uint8_t> datagram);
std::array<std::uint8_t, kFragmentSize> serialize(const Fragment& f);
Fragment parse_fragment(std::span<const std::uint8_t> bytes);

/// Server-side buffer keyed by datagram id. Partial datagrams expire
/// after the timeout; duplicate indices must carry identical data.
class Reassembler {
 public:
  explicit Reassembler(Microseconds timeout = Microseconds(600'000'000));

  /// Returns the reassembled 96 bytes when the second piece lands,
  /// nothing while pending. Throws IntegrityError on conflicting
  /// duplicates, CodecError on mixed counts or bad indices.
  std::optional<std::array<std::uint8_t, kDatagramSize>> add(const Fragment& f,
                                                             Microseconds now);

  /// Drops partials older than the timeout; returns their datagram ids.
  std::vector<std::uint16_t> expire_stale(Microseconds now);

  std::size_t pending_count() const { return pending_.size(); }

 private:
  struct Partial {
    std::uint8_t count = 0;
    Microseconds first_seen{0};
    std::map<std::uint8_t, std::array<std::uint8_t, kFragmentDataSize>> pieces;
  };

  Microseconds timeout_;
  std::map<std::uint16_t, Partial> pending_;
};

}  // namespace lorasim::meter
