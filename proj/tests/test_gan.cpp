#include "voxgan/gan.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "grad_check.hpp"
#include "voxgan/ops.hpp"

using namespace voxgan;

namespace {

// small enough to keep forward passes cheap, still two deconv blocks
ModelConfig micro_config() {
  ModelConfig c = ModelConfig::desk_scale(16);
  c.latent_dim = 8;
  c.mapping_layers = 2;
  c.g_base_channels = 16;
  c.d_base_channels = 4;
  return c;
}

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& p) {
  return Tensor<T>::param(p.shape(), std::vector<T>(static_cast<std::size_t>(p.size()), T(0)));
}

template <typename T>
void zero_affine(Affine<T>& a) {
  a.w = zeros_like(a.w);
  a.b = zeros_like(a.b);
}

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

}  // namespace

TEST(ModelConfigTest, FullScaleDefaults) {
  const ModelConfig c = ModelConfig::full_scale();
  EXPECT_EQ(c.latent_dim, 512);
  EXPECT_EQ(c.mapping_layers, 8);
  EXPECT_EQ(c.output_size, 64);
  EXPECT_EQ(c.pack_size, 2);
  EXPECT_EQ(c.deconv_blocks(), 4);
  EXPECT_EQ(c.generator_channels(), (std::vector<i64>{256, 128, 64, 1}));
  EXPECT_EQ(c.discriminator_channels(), (std::vector<i64>{64, 128, 256, 512, 1}));
  EXPECT_EQ(c.final_kernel(), 4);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfigTest, DeskScaleDividesChannelsByFour) {
  const ModelConfig c = ModelConfig::desk_scale(16);
  EXPECT_EQ(c.latent_dim, 512);
  EXPECT_EQ(c.g_base_channels, 128);
  EXPECT_EQ(c.d_base_channels, 16);
  EXPECT_EQ(c.deconv_blocks(), 2);
  EXPECT_EQ(c.generator_channels(), (std::vector<i64>{64, 1}));
  EXPECT_EQ(c.discriminator_channels(), (std::vector<i64>{16, 32, 64, 128, 1}));
  EXPECT_EQ(c.final_kernel(), 1);

  const ModelConfig c32 = ModelConfig::desk_scale(32);
  EXPECT_EQ(c32.deconv_blocks(), 3);
  EXPECT_EQ(c32.generator_channels(), (std::vector<i64>{64, 32, 1}));
  EXPECT_EQ(c32.final_kernel(), 2);
}

TEST(ModelConfigTest, ValidationRejectsBadValues) {
  ModelConfig c = ModelConfig::desk_scale(16);
  c.output_size = 24;
  EXPECT_THROW(c.validate(), ShapeError);
  c = ModelConfig::desk_scale(16);
  c.latent_dim = 0;
  EXPECT_THROW(c.validate(), ShapeError);
  c = ModelConfig::desk_scale(16);
  c.g_base_channels = 1;  // second block would get zero channels
  EXPECT_THROW(c.validate(), ShapeError);
}

TEST(MapLatentTest, ZeroWeightsGiveZeroStyleVector) {
  Rng rng(11);
  auto g = make_generator<float>(micro_config(), rng);
  for (auto& l : g.mapping) zero_affine(l);
  const auto z = random_tensor<float>(rng, {3, g.cfg.latent_dim});
  const auto w = map_latent(g, z);
  ASSERT_EQ(w.shape(), (Shape{3, g.cfg.latent_dim}));
  for (float v : w.values()) EXPECT_EQ(v, 0.0f);
}

TEST(MapLatentTest, IdentityLayersPassPositiveLatentThrough) {
  Rng rng(12);
  auto g = make_generator<float>(micro_config(), rng);
  const i64 d = g.cfg.latent_dim;
  std::vector<float> eye(static_cast<std::size_t>(d * d), 0.0f);
  for (i64 i = 0; i < d; ++i) eye[static_cast<std::size_t>(i * d + i)] = 1.0f;
  for (auto& l : g.mapping) {
    l.w = Tensor<float>::param({d, d}, eye);
    l.b = zeros_like(l.b);
  }
  const auto z = random_tensor<float>(rng, {4, d}, 0.1, 2.0);
  const auto w = map_latent(g, z);
  ASSERT_EQ(w.shape(), z.shape());
  for (std::size_t i = 0; i < z.values().size(); ++i) {
    EXPECT_EQ(w.values()[i], z.values()[i]);
  }
}

TEST(MapLatentTest, RejectsWrongLatentWidth) {
  Rng rng(13);
  auto g = make_generator<float>(micro_config(), rng);
  EXPECT_THROW(map_latent(g, random_tensor<float>(rng, {2, g.cfg.latent_dim + 1})),
               ShapeError);
  EXPECT_THROW(map_latent(g, random_tensor<float>(rng, {g.cfg.latent_dim})), ShapeError);
}

TEST(SynthesizeTest, OutputFollowsShapeLadder) {
  Rng rng(21);
  auto g16 = make_generator<float>(micro_config(), rng);
  SynthTrace<float> trace;
  const auto out = synthesize(g16, random_tensor<float>(rng, {2, 8}), &trace);
  EXPECT_EQ(out.shape(), (Shape{2, 1, 16, 16, 16}));
  ASSERT_EQ(trace.pre_adain.size(), 3u);
  EXPECT_EQ(trace.pre_adain[0].shape(), (Shape{2, 16, 4, 4, 4}));
  EXPECT_EQ(trace.pre_adain[1].shape(), (Shape{2, 8, 8, 8, 8}));
  EXPECT_EQ(trace.pre_adain[2].shape(), (Shape{2, 1, 16, 16, 16}));

  ModelConfig c32 = micro_config();
  c32.output_size = 32;
  auto g32 = make_generator<float>(c32, rng);
  EXPECT_EQ(synthesize(g32, random_tensor<float>(rng, {1, 8})).shape(),
            (Shape{1, 1, 32, 32, 32}));
}

TEST(SynthesizeTest, OutputStrictlyInsideUnitInterval) {
  Rng rng(22);
  auto g = make_generator<float>(micro_config(), rng);
  const auto out = generate(g, sample_latent<float>(rng, 2, 8, 0.2));
  for (float v : out.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(SynthesizeTest, ZeroStyleAffinesGiveHalfEverywhere) {
  Rng rng(23);
  auto g = make_generator<float>(micro_config(), rng);
  for (auto& a : g.styles) zero_affine(a);
  const auto out = synthesize(g, random_tensor<float>(rng, {2, 8}));
  for (float v : out.values()) EXPECT_EQ(v, 0.5f);
}

TEST(SynthesizeTest, StyleEditTouchesOnlyLaterBlocks) {
  Rng rng(24);
  auto g = make_generator<float>(micro_config(), rng);
  const auto w = random_tensor<float>(rng, {2, 8});
  SynthTrace<float> base;
  const auto out0 = synthesize(g, w, &base);

  // final block style: every pre-AdaIN activation stays bitwise identical
  auto g_last = g;
  g_last.styles.back() = {
      detail::gaussian_param<float>(rng, g.styles.back().w.shape(), 0.5),
      detail::gaussian_param<float>(rng, g.styles.back().b.shape(), 0.5)};
  SynthTrace<float> t_last;
  const auto out_last = synthesize(g_last, w, &t_last);
  ASSERT_EQ(t_last.pre_adain.size(), base.pre_adain.size());
  for (std::size_t i = 0; i < base.pre_adain.size(); ++i) {
    EXPECT_EQ(base.pre_adain[i].values(), t_last.pre_adain[i].values()) << "block " << i;
  }
  EXPECT_NE(out0.values(), out_last.values());

  // first block style: the constant is untouched, everything after shifts
  auto g_first = g;
  g_first.styles.front() = {
      detail::gaussian_param<float>(rng, g.styles.front().w.shape(), 0.5),
      detail::gaussian_param<float>(rng, g.styles.front().b.shape(), 0.5)};
  SynthTrace<float> t_first;
  synthesize(g_first, w, &t_first);
  EXPECT_EQ(base.pre_adain[0].values(), t_first.pre_adain[0].values());
  EXPECT_NE(base.pre_adain[1].values(), t_first.pre_adain[1].values());
}

TEST(SynthesizeTest, GenerateComposesMappingAndSynthesis) {
  Rng rng(25);
  auto g = make_generator<float>(micro_config(), rng);
  const auto z = sample_latent<float>(rng, 2, 8, 0.2);
  const auto a = generate(g, z);
  const auto b = synthesize(g, map_latent(g, z));
  EXPECT_EQ(a.values(), b.values());
}

TEST(SynthesizeTest, BatchRowsMatchSingleSamples) {
  Rng rng(26);
  auto g = make_generator<float>(micro_config(), rng);
  const auto w = random_tensor<float>(rng, {2, 8});
  const auto& wv = w.values();
  const auto w0 = Tensor<float>::from({1, 8}, {wv.begin(), wv.begin() + 8});
  const auto w1 = Tensor<float>::from({1, 8}, {wv.begin() + 8, wv.end()});
  const auto both = synthesize(g, w).values();
  const auto one = synthesize(g, w0).values();
  const auto two = synthesize(g, w1).values();
  ASSERT_EQ(both.size(), one.size() + two.size());
  EXPECT_TRUE(std::equal(one.begin(), one.end(), both.begin()));
  EXPECT_TRUE(std::equal(two.begin(), two.end(), both.begin() + one.size()));
}

TEST(DiscriminateTest, ZeroWeightsScoreZero) {
  Rng rng(31);
  auto d = make_discriminator<float>(micro_config(), rng);
  for (auto& l : d.convs) zero_affine(l);
  const auto pack = random_tensor<float>(rng, {3, 2, 16, 16, 16}, 0.0, 1.0);
  const auto scores = discriminate(d, pack);
  ASSERT_EQ(scores.shape(), (Shape{3}));
  for (float v : scores.values()) EXPECT_EQ(v, 0.0f);
}

TEST(DiscriminateTest, LayerOutputsHalveSpatially) {
  Rng rng(32);
  auto d = make_discriminator<float>(micro_config(), rng);
  CriticTrace<float> trace;
  discriminate(d, random_tensor<float>(rng, {2, 2, 16, 16, 16}, 0.0, 1.0), &trace);
  ASSERT_EQ(trace.layers.size(), 5u);
  EXPECT_EQ(trace.layers[0].shape(), (Shape{2, 4, 8, 8, 8}));
  EXPECT_EQ(trace.layers[1].shape(), (Shape{2, 8, 4, 4, 4}));
  EXPECT_EQ(trace.layers[2].shape(), (Shape{2, 16, 2, 2, 2}));
  EXPECT_EQ(trace.layers[3].shape(), (Shape{2, 32, 1, 1, 1}));
  EXPECT_EQ(trace.layers[4].shape(), (Shape{2, 1, 1, 1, 1}));
}

TEST(DiscriminateTest, PackChannelOrderMatters) {
  Rng rng(33);
  auto d = make_discriminator<float>(micro_config(), rng);
  const i64 vol = 16 * 16 * 16;
  const auto a = random_tensor<float>(rng, {vol}, 0.0, 1.0).values();
  const auto b = random_tensor<float>(rng, {vol}, 0.0, 1.0).values();
  std::vector<float> fwd(a.begin(), a.end());
  fwd.insert(fwd.end(), b.begin(), b.end());
  std::vector<float> rev(b.begin(), b.end());
  rev.insert(rev.end(), a.begin(), a.end());
  const float s_fwd =
      discriminate(d, Tensor<float>::from({1, 2, 16, 16, 16}, std::move(fwd))).item();
  const float s_rev =
      discriminate(d, Tensor<float>::from({1, 2, 16, 16, 16}, std::move(rev))).item();
  EXPECT_NE(s_fwd, s_rev);
}

TEST(DiscriminateTest, RejectsWrongPackShape) {
  Rng rng(34);
  auto d = make_discriminator<float>(micro_config(), rng);
  EXPECT_THROW(discriminate(d, random_tensor<float>(rng, {2, 1, 16, 16, 16})), ShapeError);
  EXPECT_THROW(discriminate(d, random_tensor<float>(rng, {2, 2, 8, 8, 8})), ShapeError);
}

TEST(ParameterTest, DeskScaleCountsMatchHandCounts) {
  Rng rng(41);
  const ModelConfig c = ModelConfig::desk_scale(16);
  auto g = make_generator<float>(c, rng);
  auto d = make_discriminator<float>(c, rng);

  // mapping 8x(512*512+512), constant 128*4^3,
  // styles 512->2C for C in {128,64,1}, deconvs 128->64->1 with 4^3 kernels
  const i64 mapping = 8 * (512 * 512 + 512);
  const i64 constant = 128 * 64;
  const i64 styles = (512 * 256 + 256) + (512 * 128 + 128) + (512 * 2 + 2);
  const i64 deconvs = (128 * 64 * 64 + 64) + (64 * 1 * 64 + 1);
  EXPECT_EQ(parameter_count(g), mapping + constant + styles + deconvs);
  EXPECT_EQ(parameter_count(g), 2835907);

  // five conv layers, pack entry 2 channels, final kernel 1
  const i64 critic = (16 * 2 * 64 + 16) + (32 * 16 * 64 + 32) + (64 * 32 * 64 + 64) +
                     (128 * 64 * 64 + 128) + (1 * 128 * 1 + 1);
  EXPECT_EQ(parameter_count(d), critic);
  EXPECT_EQ(parameter_count(d), 690545);
}

TEST(ParameterTest, FullScaleCountsMatchHandCounts) {
  Rng rng(42);
  const ModelConfig c = ModelConfig::full_scale();
  auto g = make_generator<float>(c, rng);
  auto d = make_discriminator<float>(c, rng);

  const i64 mapping = 8 * (512 * 512 + 512);
  const i64 constant = 512 * 64;
  const i64 styles = (512 * 1024 + 1024) + (512 * 512 + 512) + (512 * 256 + 256) +
                     (512 * 128 + 128) + (512 * 2 + 2);
  const i64 deconvs = (512 * 256 * 64 + 256) + (256 * 128 * 64 + 128) +
                      (128 * 64 * 64 + 64) + (64 * 1 * 64 + 1);
  EXPECT_EQ(parameter_count(g), mapping + constant + styles + deconvs);
  EXPECT_EQ(parameter_count(g), 14134595);

  const i64 critic = (64 * 2 * 64 + 64) + (128 * 64 * 64 + 128) + (256 * 128 * 64 + 256) +
                     (512 * 256 * 64 + 512) + (1 * 512 * 64 + 1);
  EXPECT_EQ(parameter_count(d), critic);
  EXPECT_EQ(parameter_count(d), 11051969);
}

TEST(ParameterTest, DeclarationOrderAndGradFlags) {
  Rng rng(43);
  auto g = make_generator<float>(micro_config(), rng);
  const auto params = parameters(g);
  auto refs = parameter_refs(g);
  ASSERT_EQ(params.size(), refs.size());
  EXPECT_EQ(params.size(), 2 * 2 + 1 + 3 * 2 + 2 * 2);  // mapping, const, styles, deconvs
  EXPECT_EQ(params[0].node(), g.mapping[0].w.node());
  EXPECT_EQ(params[4].node(), g.constant.node());
  EXPECT_EQ(params.back().node(), g.deconvs.back().b.node());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(params[i].node(), refs[i]->node());
    EXPECT_TRUE(params[i].requires_grad());
  }
}

TEST(ParameterTest, InitIsGaussianWeightsZeroBiases) {
  Rng rng(44);
  auto g = make_generator<float>(ModelConfig::desk_scale(16), rng);
  for (const auto& l : g.mapping) {
    for (float v : l.b.values()) ASSERT_EQ(v, 0.0f);
  }
  for (const auto& l : g.styles) {
    for (float v : l.b.values()) ASSERT_EQ(v, 0.0f);
  }
  for (const auto& l : g.deconvs) {
    for (float v : l.b.values()) ASSERT_EQ(v, 0.0f);
  }
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& l : g.mapping) {
    for (float v : l.w.values()) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  EXPECT_NEAR(mean, 0.0, 1e-4);
  EXPECT_NEAR(sd, 0.02, 1e-3);
}

TEST(ParameterTest, SeededInitIsDeterministic) {
  Rng a(99), b(99), c(100);
  const auto cfg = micro_config();
  auto g1 = make_generator<float>(cfg, a);
  auto g2 = make_generator<float>(cfg, b);
  auto g3 = make_generator<float>(cfg, c);
  EXPECT_EQ(g1.constant.values(), g2.constant.values());
  EXPECT_EQ(g1.mapping[0].w.values(), g2.mapping[0].w.values());
  EXPECT_NE(g1.constant.values(), g3.constant.values());
}

TEST(GradientFlowTest, BackwardReachesEveryParameter) {
  Rng rng(51);
  const auto cfg = micro_config();
  auto g = make_generator<float>(cfg, rng);
  auto d = make_discriminator<float>(cfg, rng);

  const auto z = sample_latent<float>(rng, 4, cfg.latent_dim, 0.2);
  const auto vox = generate(g, z);                        // [4,1,16,16,16]
  const auto pack = reshape(vox, {2, 2, 16, 16, 16});     // two packs of two
  const auto loss = mean_all(discriminate(d, pack));

  auto all = parameters(g);
  for (const auto& p : parameters(d)) all.push_back(p);
  const auto grads = grad(loss, all);
  ASSERT_EQ(grads.size(), all.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    ASSERT_EQ(grads[i].shape(), all[i].shape());
    for (float v : grads[i].values()) ASSERT_TRUE(std::isfinite(v));
  }
  auto max_abs = [](const Tensor<float>& t) {
    float m = 0.0f;
    for (float v : t.values()) m = std::max(m, std::abs(v));
    return m;
  };
  EXPECT_GT(max_abs(grads[0]), 0.0f);  // first mapping weight
  EXPECT_GT(max_abs(grads[4]), 0.0f);  // learned constant
  EXPECT_GT(max_abs(grads[grads.size() - 2]), 0.0f);  // last critic weight
}

TEST(GradientFlowTest, PipelineGradientsMatchFiniteDifferences) {
  ModelConfig cfg = micro_config();
  cfg.latent_dim = 4;
  cfg.mapping_layers = 1;
  cfg.g_base_channels = 8;
  cfg.d_base_channels = 2;

  Rng init(52);
  auto g = make_generator<double>(cfg, init);
  auto d = make_discriminator<double>(cfg, init);

  // spot-check one parameter of each kind plus the latent itself
  Rng rng(53);
  const auto z_draw = sample_latent<double>(rng, 2, cfg.latent_dim, 0.2);
  const auto z = Tensor<double>::param(z_draw.shape(), z_draw.values());
  std::vector<Tensor<double>> inputs = {
      g.mapping[0].w, g.constant,       g.styles[1].w, g.deconvs[0].w,
      d.convs[0].w,   d.convs.back().b, z};

  auto f = [&](const std::vector<Tensor<double>>& in) {
    auto gm = g;
    auto dm = d;
    gm.mapping[0].w = in[0];
    gm.constant = in[1];
    gm.styles[1].w = in[2];
    gm.deconvs[0].w = in[3];
    dm.convs[0].w = in[4];
    dm.convs.back().b = in[5];
    const auto vox = generate(gm, in[6]);
    return mean_all(discriminate(dm, reshape(vox, {1, 2, 16, 16, 16})));
  };

  gradcheck::Result res;
  gradcheck::check_instance(res, "pipeline", f, inputs, rng);
  for (const auto& msg : res.failures) ADD_FAILURE() << msg;
  EXPECT_GT(res.comparisons, 0);
}
