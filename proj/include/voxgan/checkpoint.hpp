#pragma once

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "voxgan/gan.hpp"
#include "voxgan/vgrid_io.hpp"

namespace voxgan {

// Model snapshot, little-endian:
//   "3DMG" | version u16 | config | parameter count u64 | payload | crc32 u32
// Config is six u32 fields (latent_dim, mapping_layers, output_size,
// pack_size, g_base_channels, d_base_channels) followed by leaky_slope and
// adain_eps as f32. The payload is every generator parameter then every
// critic parameter, declaration order, flat f32. The checksum is zlib crc32
// over the payload bytes.

namespace detail {

constexpr char kCkptMagic[4] = {'3', 'D', 'M', 'G'};
constexpr std::uint16_t kCkptVersion = 1;

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t payload_crc(const std::uint8_t* data, std::size_t size) {
  return static_cast<std::uint32_t>(crc32_z(crc32_z(0, nullptr, 0), data, size));
}

}  // namespace detail

template <typename T>
struct Checkpoint {
  GeneratorModel<T> gen;
  DiscriminatorModel<T> disc;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const GeneratorModel<T>& gen,
                     const DiscriminatorModel<T>& disc) {
  if (!(gen.cfg == disc.cfg)) {
    throw std::invalid_argument("save_checkpoint: generator and critic configs differ");
  }
  const ModelConfig& c = gen.cfg;

  std::string out;
  out.append(detail::kCkptMagic, 4);
  detail::put_u16(out, detail::kCkptVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(c.latent_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(c.mapping_layers));
  detail::put_u32(out, static_cast<std::uint32_t>(c.output_size));
  detail::put_u32(out, static_cast<std::uint32_t>(c.pack_size));
  detail::put_u32(out, static_cast<std::uint32_t>(c.g_base_channels));
  detail::put_u32(out, static_cast<std::uint32_t>(c.d_base_channels));
  detail::put_f32(out, c.leaky_slope);
  detail::put_f32(out, c.adain_eps);
  detail::put_u64(out, static_cast<std::uint64_t>(parameter_count(gen) +
                                                  parameter_count(disc)));

  const std::size_t payload_at = out.size();
  auto append_params = [&out](const std::vector<Tensor<T>>& params) {
    for (const auto& p : params) {
      for (T v : p.values()) detail::put_f32(out, static_cast<float>(v));
    }
  };
  append_params(parameters(gen));
  append_params(parameters(disc));

  const std::uint32_t crc = detail::payload_crc(
      reinterpret_cast<const std::uint8_t*>(out.data()) + payload_at,
      out.size() - payload_at);
  detail::put_u32(out, crc);

  // stage then rename so a crash never leaves a half-written snapshot
  const std::filesystem::path tmp = path.string() + ".tmp";
  detail::write_file(tmp, out);
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes.data(), bytes.size());

  {
    const std::uint64_t at = r.offset();
    const std::uint8_t* m = r.raw(4, "magic");
    if (std::memcmp(m, detail::kCkptMagic, 4) != 0) throw FormatError("bad magic", at);
  }
  {
    const std::uint64_t at = r.offset();
    const std::uint16_t version = r.u16("version");
    if (version != detail::kCkptVersion) {
      throw FormatError("unsupported version " + std::to_string(version), at);
    }
  }

  const std::uint64_t cfg_at = r.offset();
  ModelConfig c;
  c.latent_dim = r.u32("latent_dim");
  c.mapping_layers = r.u32("mapping_layers");
  c.output_size = r.u32("output_size");
  c.pack_size = r.u32("pack_size");
  c.g_base_channels = r.u32("g_base_channels");
  c.d_base_channels = r.u32("d_base_channels");
  c.leaky_slope = r.f32("leaky_slope");
  c.adain_eps = r.f32("adain_eps");
  try {
    c.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid config: ") + e.what(), cfg_at);
  }

  const std::uint64_t count_at = r.offset();
  const std::uint64_t count = [&r] {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(r.raw(1, "count")[0]) << (8 * i);
    return v;
  }();

  Rng scratch(0);
  Checkpoint<T> ckpt{make_generator<T>(c, scratch), make_discriminator<T>(c, scratch)};
  const std::uint64_t expect = static_cast<std::uint64_t>(parameter_count(ckpt.gen) +
                                                          parameter_count(ckpt.disc));
  if (count != expect) {
    throw FormatError("parameter count " + std::to_string(count) + " does not match config (" +
                          std::to_string(expect) + ")",
                      count_at);
  }

  const std::uint8_t* payload = r.raw(4 * count, "payload");
  const std::uint64_t crc_at = r.offset();
  const std::uint32_t stored_crc = r.u32("crc32");
  const std::uint32_t actual_crc = detail::payload_crc(payload, 4 * count);
  if (stored_crc != actual_crc) throw FormatError("checksum mismatch", crc_at);

  std::size_t pos = 0;
  auto fill = [payload, &pos](std::vector<Tensor<T>*> refs) {
    for (Tensor<T>* p : refs) {
      std::vector<T> v(static_cast<std::size_t>(p->size()));
      for (auto& x : v) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          bits |= static_cast<std::uint32_t>(payload[pos + b]) << (8 * b);
        }
        pos += 4;
        float f;
        std::memcpy(&f, &bits, 4);
        x = static_cast<T>(f);
      }
      *p = Tensor<T>::param(p->shape(), std::move(v));
    }
  };
  fill(parameter_refs(ckpt.gen));
  fill(parameter_refs(ckpt.disc));
  return ckpt;
}

}  // namespace voxgan
