#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/voxel_grid.hpp"

namespace voxgan {

// VGRID container, little-endian:
//   "VGRD" | version u16 | payload kind u16 | nx,ny,nz u32 | pitch f32 | payload
// Payload kinds: 0 = binary u8, 1 = float f32, 2 = labels u32.
// Elements are row-major with z fastest.

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

enum class PayloadKind : std::uint16_t { Binary = 0, Float = 1, Labels = 2 };

namespace detail {

constexpr char kMagic[4] = {'V', 'G', 'R', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::int64_t kMaxDim = 1 << 20;

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint64_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > size_) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_]) |
                      static_cast<std::uint16_t>(data_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  const std::uint8_t* raw(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::uint64_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::string header(PayloadKind kind, Dims d, float pitch) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u16(out, static_cast<std::uint16_t>(kind));
  put_u32(out, static_cast<std::uint32_t>(d.nx));
  put_u32(out, static_cast<std::uint32_t>(d.ny));
  put_u32(out, static_cast<std::uint32_t>(d.nz));
  put_f32(out, pitch);
  return out;
}

struct Header {
  PayloadKind kind;
  Dims dims;
  float pitch;
};

inline Header parse_header(Reader& r) {
  {
    const std::uint64_t at = r.offset();
    const std::uint8_t* m = r.raw(4, "magic");
    if (std::memcmp(m, kMagic, 4) != 0) throw FormatError("bad magic", at);
  }
  {
    const std::uint64_t at = r.offset();
    const std::uint16_t version = r.u16("version");
    if (version != kVersion) {
      throw FormatError("unsupported version " + std::to_string(version), at);
    }
  }
  const std::uint64_t kind_at = r.offset();
  const std::uint16_t kind = r.u16("payload kind");
  if (kind > 2) throw FormatError("unknown payload kind " + std::to_string(kind), kind_at);

  Dims d;
  const std::uint64_t dims_at = r.offset();
  d.nx = r.u32("nx");
  d.ny = r.u32("ny");
  d.nz = r.u32("nz");
  if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0 || d.nx > kMaxDim || d.ny > kMaxDim ||
      d.nz > kMaxDim || d.nx * d.ny > kMaxDim || d.count() > kMaxDim * 64) {
    throw FormatError("dimension overflow", dims_at);
  }
  const float pitch = r.f32("pitch");
  return {static_cast<PayloadKind>(kind), d, pitch};
}

}  // namespace detail

// Binary-valued grids are stored one byte per voxel, anything else as f32.
inline void save_grid(const std::filesystem::path& path, const VoxelGrid& grid) {
  const bool binary = grid.is_binary();
  std::string out = detail::header(binary ? PayloadKind::Binary : PayloadKind::Float,
                                   grid.dims, grid.pitch);
  if (binary) {
    for (float v : grid.data) out.push_back(v != 0.0f ? '\x01' : '\x00');
  } else {
    for (float v : grid.data) detail::put_f32(out, v);
  }
  detail::write_file(path, out);
}

inline VoxelGrid load_grid(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes.data(), bytes.size());
  const detail::Header h = detail::parse_header(r);
  if (h.kind == PayloadKind::Labels) {
    throw FormatError("payload holds labels, not occupancy", 6);
  }
  VoxelGrid grid(h.dims, 0.0f, h.pitch);
  const std::size_t n = grid.data.size();
  if (h.kind == PayloadKind::Binary) {
    const std::uint8_t* p = r.raw(n, "payload");
    for (std::size_t i = 0; i < n; ++i) grid.data[i] = p[i] != 0 ? 1.0f : 0.0f;
  } else {
    const std::uint8_t* p = r.raw(4 * n, "payload");
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
      std::memcpy(&grid.data[i], &bits, 4);
    }
  }
  return grid;
}

inline void save_labels(const std::filesystem::path& path, const LabeledVolume& vol) {
  std::string out = detail::header(PayloadKind::Labels, vol.dims, vol.pitch);
  for (std::uint32_t v : vol.labels) detail::put_u32(out, v);
  detail::write_file(path, out);
}

inline LabeledVolume load_labels(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes.data(), bytes.size());
  const detail::Header h = detail::parse_header(r);
  if (h.kind != PayloadKind::Labels) {
    throw FormatError("payload holds occupancy, not labels", 6);
  }
  LabeledVolume vol(h.dims, h.pitch);
  const std::size_t n = vol.labels.size();
  const std::uint8_t* p = r.raw(4 * n, "payload");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
    vol.labels[i] = v;
  }
  return vol;
}

inline PayloadKind peek_payload_kind(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes.data(), bytes.size());
  return detail::parse_header(r).kind;
}

}  // namespace voxgan
