#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxgan/ops.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/tensor.hpp"

// Style-based voxel generator and packed critic. The generator maps a latent
// vector through a fully connected stack, converts the result into per-block
// (scale, bias) styles, and modulates a learned 4^3 constant through a ladder
// of exact-doubling transposed convolutions. The critic is five plain conv
// layers whose input channel count is the pack size.

namespace voxgan {

struct ModelConfig {
  i64 latent_dim = 512;
  i64 mapping_layers = 8;
  i64 output_size = 64;  // cube edge of generated volumes
  i64 pack_size = 2;
  i64 g_base_channels = 512;  // channels of the learned constant
  i64 d_base_channels = 64;   // channels after the first critic layer
  float leaky_slope = 0.2f;
  float adain_eps = 1e-8f;

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig full_scale() { return ModelConfig{}; }

  // channel counts divided by four relative to full scale
  static ModelConfig desk_scale(i64 size = 16) {
    ModelConfig c;
    c.output_size = size;
    c.g_base_channels = 128;
    c.d_base_channels = 16;
    return c;
  }

  i64 deconv_blocks() const {
    i64 b = 0, s = 4;
    while (s < output_size) {
      s *= 2;
      ++b;
    }
    return b;
  }

  // outputs of the deconvolution blocks; halving channels, final block emits 1
  std::vector<i64> generator_channels() const {
    const i64 b = deconv_blocks();
    std::vector<i64> out;
    for (i64 i = 0; i < b; ++i) {
      out.push_back(i == b - 1 ? 1 : g_base_channels >> (i + 1));
    }
    return out;
  }

  // outputs of the five critic layers; the last is the scalar score
  std::vector<i64> discriminator_channels() const {
    return {d_base_channels, d_base_channels * 2, d_base_channels * 4,
            d_base_channels * 8, 1};
  }

  // spatial extent entering the last critic layer, consumed whole
  i64 final_kernel() const { return output_size / 16; }

  void validate() const {
    if (output_size != 16 && output_size != 32 && output_size != 64) {
      shape_fail("ModelConfig", "output_size must be 16, 32, or 64, got " +
                                    std::to_string(output_size));
    }
    if (latent_dim < 1 || mapping_layers < 1 || pack_size < 1 || d_base_channels < 1) {
      shape_fail("ModelConfig", "latent_dim, mapping_layers, pack_size, and channel "
                                "counts must be positive");
    }
    for (i64 c : generator_channels()) {
      if (c < 1) {
        shape_fail("ModelConfig", "g_base_channels " + std::to_string(g_base_channels) +
                                      " too small for " + std::to_string(deconv_blocks()) +
                                      " blocks");
      }
    }
  }
};

template <typename T>
struct Affine {
  Tensor<T> w, b;
};

// mapping stack, learned constant, one style affine per block (block 1 plus
// each deconv block), and the deconv kernels
template <typename T>
struct GeneratorModel {
  ModelConfig cfg;
  std::vector<Affine<T>> mapping;  // w [latent,latent], b [latent]
  Tensor<T> constant;              // [C0,4,4,4]
  std::vector<Affine<T>> styles;   // w [latent,2C], b [2C]; first C is y_s
  std::vector<Affine<T>> deconvs;  // w [Cin,Cout,4,4,4], b [Cout]
};

template <typename T>
struct DiscriminatorModel {
  ModelConfig cfg;
  std::vector<Affine<T>> convs;  // w [Cout,Cin,k,k,k], b [Cout]
};

namespace detail {

template <typename T>
Tensor<T> gaussian_param(Rng& rng, Shape shape, double stddev) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::param(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)), T(0));
  return Tensor<T>::param(std::move(shape), std::move(v));
}

constexpr double kInitStd = 0.02;

}  // namespace detail

template <typename T>
GeneratorModel<T> make_generator(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  GeneratorModel<T> g;
  g.cfg = cfg;
  for (i64 i = 0; i < cfg.mapping_layers; ++i) {
    g.mapping.push_back({detail::gaussian_param<T>(rng, {cfg.latent_dim, cfg.latent_dim},
                                                   detail::kInitStd),
                         detail::zero_param<T>({cfg.latent_dim})});
  }
  g.constant = detail::gaussian_param<T>(rng, {cfg.g_base_channels, 4, 4, 4},
                                         detail::kInitStd);
  std::vector<i64> block_channels{cfg.g_base_channels};
  for (i64 c : cfg.generator_channels()) block_channels.push_back(c);
  for (std::size_t i = 0; i < block_channels.size(); ++i) {
    const i64 c = block_channels[i];
    g.styles.push_back({detail::gaussian_param<T>(rng, {cfg.latent_dim, 2 * c},
                                                  detail::kInitStd),
                        detail::zero_param<T>({2 * c})});
  }
  for (std::size_t i = 0; i + 1 < block_channels.size(); ++i) {
    g.deconvs.push_back({detail::gaussian_param<T>(
                             rng, {block_channels[i], block_channels[i + 1], 4, 4, 4},
                             detail::kInitStd),
                         detail::zero_param<T>({block_channels[i + 1]})});
  }
  return g;
}

template <typename T>
DiscriminatorModel<T> make_discriminator(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  DiscriminatorModel<T> d;
  d.cfg = cfg;
  const auto chans = cfg.discriminator_channels();
  i64 in_c = cfg.pack_size;
  for (std::size_t i = 0; i < chans.size(); ++i) {
    const i64 k = i + 1 < chans.size() ? 4 : cfg.final_kernel();
    d.convs.push_back({detail::gaussian_param<T>(rng, {chans[i], in_c, k, k, k},
                                                 detail::kInitStd),
                       detail::zero_param<T>({chans[i]})});
    in_c = chans[i];
  }
  return d;
}

// Parameters in declaration order; the checkpoint payload and optimizer
// state both follow this order.
template <typename T>
std::vector<Tensor<T>> parameters(const GeneratorModel<T>& g) {
  std::vector<Tensor<T>> out;
  for (const auto& l : g.mapping) {
    out.push_back(l.w);
    out.push_back(l.b);
  }
  out.push_back(g.constant);
  for (const auto& l : g.styles) {
    out.push_back(l.w);
    out.push_back(l.b);
  }
  for (const auto& l : g.deconvs) {
    out.push_back(l.w);
    out.push_back(l.b);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> parameter_refs(GeneratorModel<T>& g) {
  std::vector<Tensor<T>*> out;
  for (auto& l : g.mapping) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  out.push_back(&g.constant);
  for (auto& l : g.styles) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  for (auto& l : g.deconvs) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> parameters(const DiscriminatorModel<T>& d) {
  std::vector<Tensor<T>> out;
  for (const auto& l : d.convs) {
    out.push_back(l.w);
    out.push_back(l.b);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> parameter_refs(DiscriminatorModel<T>& d) {
  std::vector<Tensor<T>*> out;
  for (auto& l : d.convs) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  return out;
}

template <typename M>
i64 parameter_count(const M& model) {
  i64 n = 0;
  for (const auto& p : parameters(model)) n += p.size();
  return n;
}

// z [N, latent] -> w [N, latent] through the fully connected stack
template <typename T>
Tensor<T> map_latent(const GeneratorModel<T>& g, const Tensor<T>& z) {
  if (z.rank() != 2 || z.dim(1) != g.cfg.latent_dim) {
    shape_fail("map_latent", "expected [batch," + std::to_string(g.cfg.latent_dim) +
                                 "], got " + shape_str(z.shape()));
  }
  Tensor<T> x = z;
  for (const auto& l : g.mapping) {
    x = leaky_relu(add_bias(matmul(x, l.w), l.b), static_cast<T>(g.cfg.leaky_slope));
  }
  return x;
}

// (y_s, y_b) for one block, each [N, C]
template <typename T>
std::pair<Tensor<T>, Tensor<T>> block_style(const GeneratorModel<T>& g, const Tensor<T>& w,
                                            std::size_t block) {
  const auto& a = g.styles[block];
  const i64 c = a.b.dim(0) / 2;
  auto s = add_bias(matmul(w, a.w), a.b);
  return {slice_channels(s, 0, c), slice_channels(s, c, c)};
}

// per-block activations entering AdaIN, for style-locality checks
template <typename T>
struct SynthTrace {
  std::vector<Tensor<T>> pre_adain;
};

template <typename T>
Tensor<T> synthesize(const GeneratorModel<T>& g, const Tensor<T>& w,
                     SynthTrace<T>* trace = nullptr) {
  if (w.rank() != 2 || w.dim(1) != g.cfg.latent_dim) {
    shape_fail("synthesize", "expected [batch," + std::to_string(g.cfg.latent_dim) +
                                 "], got " + shape_str(w.shape()));
  }
  const i64 n = w.dim(0);
  const i64 c0 = g.cfg.g_base_channels;
  const T eps = static_cast<T>(g.cfg.adain_eps);

  // learned constant, repeated across the batch
  Tensor<T> x = reshape(broadcast_bias(reshape(g.constant, {c0 * 64}), {n, c0 * 64}),
                        {n, c0, 4, 4, 4});
  if (trace) trace->pre_adain.push_back(x);
  {
    auto [ys, yb] = block_style(g, w, 0);
    x = relu(adain(x, ys, yb, eps));
  }
  for (std::size_t i = 0; i < g.deconvs.size(); ++i) {
    x = add_bias(conv_transpose3d(x, g.deconvs[i].w, 2, 1), g.deconvs[i].b);
    if (trace) trace->pre_adain.push_back(x);
    auto [ys, yb] = block_style(g, w, i + 1);
    x = adain(x, ys, yb, eps);
    x = i + 1 == g.deconvs.size() ? sigmoid(x) : relu(x);
  }
  return x;
}

template <typename T>
Tensor<T> generate(const GeneratorModel<T>& g, const Tensor<T>& z,
                   SynthTrace<T>* trace = nullptr) {
  return synthesize(g, map_latent(g, z), trace);
}

// post-activation outputs of each critic layer
template <typename T>
struct CriticTrace {
  std::vector<Tensor<T>> layers;
};

// pack [N, pack_size, S, S, S] -> unbounded scores [N]
template <typename T>
Tensor<T> discriminate(const DiscriminatorModel<T>& d, const Tensor<T>& pack,
                       CriticTrace<T>* trace = nullptr) {
  const i64 s = d.cfg.output_size;
  if (pack.rank() != 5 || pack.dim(1) != d.cfg.pack_size || pack.dim(2) != s ||
      pack.dim(3) != s || pack.dim(4) != s) {
    shape_fail("discriminate",
               "expected [batch," + std::to_string(d.cfg.pack_size) + "," +
                   std::to_string(s) + "," + std::to_string(s) + "," + std::to_string(s) +
                   "], got " + shape_str(pack.shape()));
  }
  Tensor<T> x = pack;
  for (std::size_t i = 0; i < d.convs.size(); ++i) {
    const bool last = i + 1 == d.convs.size();
    x = add_bias(conv3d(x, d.convs[i].w, last ? 1 : 2, last ? 0 : 1), d.convs[i].b);
    if (!last) x = leaky_relu(x, static_cast<T>(d.cfg.leaky_slope));
    if (trace) trace->layers.push_back(x);
  }
  return reshape(x, {pack.dim(0)});
}

// latent draws, componentwise normal with the requested variance
template <typename T>
Tensor<T> sample_latent(Rng& rng, i64 n, i64 latent_dim, double variance) {
  const double sd = std::sqrt(variance);
  std::vector<T> v(static_cast<std::size_t>(n * latent_dim));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, sd));
  return Tensor<T>::from({n, latent_dim}, std::move(v));
}

}  // namespace voxgan
