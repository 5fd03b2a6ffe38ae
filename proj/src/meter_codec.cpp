#include "lorasim/meter_codec.hpp"

#include <algorithm>
#include <cstring>

namespace lorasim::meter {

namespace {

void put_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v >> 24);
  p[1] = static_cast<std::uint8_t>(v >> 16);
  p[2] = static_cast<std::uint8_t>(v >> 8);
  p[3] = static_cast<std::uint8_t>(v);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace

std::array<std::uint8_t, kDatagramSize> encode(const MeterDatagram& d) {
  std::array<std::uint8_t, kDatagramSize> out{};
  put_u32(out.data(), static_cast<std::uint32_t>(d.meter_id >> 32));
  put_u32(out.data() + 4, static_cast<std::uint32_t>(d.meter_id));
  put_u32(out.data() + 8, d.datagram_seq);
  put_u32(out.data() + 12, d.timestamp_s);
  out[16] = static_cast<std::uint8_t>(d.meter_type);
  out[17] = d.status_flags;
  for (int i = 0; i < kReadingCount; ++i) {
    put_u32(out.data() + 18 + 4 * i, static_cast<std::uint32_t>(d.readings[i]));
  }
  // bytes 94..95 stay zero (reserved)
  return out;
}

MeterDatagram decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kDatagramSize) {
    throw CodecError("datagram must be exactly 96 bytes");
  }
  if (bytes[94] != 0 || bytes[95] != 0) {
    throw CodecError("reserved bytes must be zero");
  }
  if (bytes[16] > 2) throw CodecError("unknown meter type");
  MeterDatagram d;
  d.meter_id = (static_cast<std::uint64_t>(get_u32(bytes.data())) << 32) |
               get_u32(bytes.data() + 4);
  d.datagram_seq = get_u32(bytes.data() + 8);
  d.timestamp_s = get_u32(bytes.data() + 12);
  d.meter_type = static_cast<MeterType>(bytes[16]);
  d.status_flags = bytes[17];
  for (int i = 0; i < kReadingCount; ++i) {
    d.readings[i] = static_cast<std::int32_t>(get_u32(bytes.data() + 18 + 4 * i));
  }
  return d;
}

std::array<Fragment, kFragmentCount> make_fragments(std::uint32_t datagram_seq,
                                                    std::span<const std::uint8_t> datagram) {
  if (datagram.size() != kDatagramSize) {
    throw CodecError("only 96-byte datagrams fragment");
  }
  std::array<Fragment, kFragmentCount> out;
  for (int i = 0; i < kFragmentCount; ++i) {
    out[i].datagram_id = static_cast<std::uint16_t>(datagram_seq & 0xffff);
    out[i].index = static_cast<std::uint8_t>(i);
    out[i].count = kFragmentCount;
    std::memcpy(out[i].data.data(), datagram.data() + i * kFragmentDataSize,
                kFragmentDataSize);
  }
  return out;
}

std::array<std::uint8_t, kFragmentSize> serialize(const Fragment& f) {
  if (f.index >= f.count) throw CodecError("fragment index must be below count");
  std::array<std::uint8_t, kFragmentSize> out{};
  out[0] = static_cast<std::uint8_t>(f.datagram_id >> 8);
  out[1] = static_cast<std::uint8_t>(f.datagram_id);
  out[2] = static_cast<std::uint8_t>((f.index << 4) | (f.count & 0x0f));
  std::memcpy(out.data() + 3, f.data.data(), kFragmentDataSize);
  return out;
}

Fragment parse_fragment(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kFragmentSize) {
    throw CodecError("fragment must be exactly 51 bytes");
  }
  Fragment f;
  f.datagram_id = static_cast<std::uint16_t>((std::uint16_t(bytes[0]) << 8) | bytes[1]);
  f.index = bytes[2] >> 4;
  f.count = bytes[2] & 0x0f;
  if (f.count == 0 || f.index >= f.count) throw CodecError("bad fragment header");
  std::memcpy(f.data.data(), bytes.data() + 3, kFragmentDataSize);
  return f;
}

Reassembler::Reassembler(Microseconds timeout) : timeout_(timeout) {}

std::optional<std::array<std::uint8_t, kDatagramSize>> Reassembler::add(
    const Fragment& f, Microseconds now) {
  if (f.count != kFragmentCount) {
    throw CodecError("unsupported fragment count " + std::to_string(f.count));
  }
  if (f.index >= f.count) throw CodecError("fragment index out of range");

  auto it = pending_.find(f.datagram_id);
  if (it == pending_.end()) {
    Partial p;
    p.count = f.count;
    p.first_seen = now;
    p.pieces[f.index] = f.data;
    pending_.emplace(f.datagram_id, std::move(p));
    return std::nullopt;
  }

  Partial& p = it->second;
  if (p.count != f.count) throw CodecError("fragment count mismatch within datagram");
  auto existing = p.pieces.find(f.index);
  if (existing != p.pieces.end()) {
    if (existing->second != f.data) {
      throw IntegrityError("conflicting duplicate fragment " + std::to_string(f.index));
    }
    return std::nullopt;  // benign duplicate
  }
  p.pieces[f.index] = f.data;
  if (p.pieces.size() < p.count) return std::nullopt;

  std::array<std::uint8_t, kDatagramSize> out{};
  for (const auto& [index, data] : p.pieces) {
    std::memcpy(out.data() + index * kFragmentDataSize, data.data(), kFragmentDataSize);
  }
  pending_.erase(it);
  return out;
}

std::vector<std::uint16_t> Reassembler::expire_stale(Microseconds now) {
  std::vector<std::uint16_t> expired;
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (now - it->second.first_seen >= timeout_) {
      expired.push_back(it->first);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  return expired;
}

}  // namespace lorasim::meter
