#pragma once

#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/checkpoint.hpp"
#include "voxgan/csv.hpp"
#include "voxgan/gan.hpp"
#include "voxgan/ops.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/voxel_grid.hpp"

// Wasserstein critic/generator optimization with gradient penalty. A step is
// one critic update; after every n_critic-th step the generator updates once,
// so the 5:1 cadence is structural. Everything draws from a single seeded
// stream, which makes loss traces bitwise reproducible single-threaded.

namespace voxgan {

struct TrainConfig {
  double lr = 2e-4;
  i64 batch = 16;  // packs per update; desk runs use 8
  i64 n_critic = 5;
  double lambda_gp = 10.0;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps_adam = 1e-8;
  double z_variance = 0.2;
  i64 max_steps = 300;
  i64 checkpoint_every = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (lr <= 0 || lambda_gp < 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 ||
        eps_adam <= 0 || z_variance <= 0) {
      throw std::invalid_argument("TrainConfig: rates must be positive, betas in (0,1)");
    }
    if (batch < 1 || n_critic < 1 || max_steps < 0 || checkpoint_every < 1) {
      throw std::invalid_argument("TrainConfig: batch, n_critic, checkpoint_every >= 1");
    }
  }
};

// first/second moment accumulators, one flat buffer per parameter
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  i64 t = 0;

  template <typename Model>
  static AdamState for_model(const Model& model) {
    AdamState s;
    for (const auto& p : parameters(model)) {
      s.m.emplace_back(static_cast<std::size_t>(p.size()), T(0));
      s.v.emplace_back(static_cast<std::size_t>(p.size()), T(0));
    }
    return s;
  }
};

// standard bias-corrected update; params are replaced, not mutated in place
template <typename T>
void adam_update(std::vector<Tensor<T>*> params, const std::vector<Tensor<T>>& grads,
                 AdamState<T>& state, double lr, double beta1, double beta2,
                 double eps_adam) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    shape_fail("adam_update", "parameter, gradient, and state counts differ");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    if (p.shape() != grads[i].shape()) {
      shape_fail("adam_update", "parameter " + std::to_string(i) + " shape " +
                                    shape_str(p.shape()) + " vs gradient " +
                                    shape_str(grads[i].shape()));
    }
    const auto& gv = grads[i].values();
    std::vector<T> nv = p.values();
    auto& mi = state.m[i];
    auto& vi = state.v[i];
    for (std::size_t j = 0; j < nv.size(); ++j) {
      const double g = static_cast<double>(gv[j]);
      const double m = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * g;
      const double v = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * g * g;
      mi[j] = static_cast<T>(m);
      vi[j] = static_cast<T>(v);
      const double step = lr * (m / bc1) / (std::sqrt(v / bc2) + eps_adam);
      nv[j] = static_cast<T>(static_cast<double>(nv[j]) - step);
    }
    p = Tensor<T>::param(p.shape(), std::move(nv));
  }
}

// mean over the batch of (||grad_xhat critic(xhat)||_2 - 1)^2 with xhat a
// per-sample uniform interpolate; differentiable w.r.t. critic parameters
template <typename T, typename CriticFn>
  requires std::invocable<CriticFn&, const Tensor<T>&>
Tensor<T> gradient_penalty(CriticFn&& critic, const Tensor<T>& real_pack,
                           const Tensor<T>& fake_pack, Rng& rng) {
  if (real_pack.shape() != fake_pack.shape()) {
    shape_fail("gradient_penalty", "real " + shape_str(real_pack.shape()) + " vs fake " +
                                       shape_str(fake_pack.shape()));
  }
  const i64 n = real_pack.dim(0);
  const i64 per = real_pack.size() / n;
  const auto& rv = real_pack.values();
  const auto& fv = fake_pack.values();
  std::vector<T> mixed(rv.size());
  for (i64 i = 0; i < n; ++i) {
    const T e = static_cast<T>(rng.uniform());
    const std::size_t base = static_cast<std::size_t>(i * per);
    for (i64 j = 0; j < per; ++j) {
      mixed[base + j] = e * rv[base + j] + (T(1) - e) * fv[base + j];
    }
  }
  const auto x_hat = Tensor<T>::param(real_pack.shape(), std::move(mixed));
  const auto scores = critic(x_hat);
  const auto g = grad(sum_all(scores), {x_hat}, true)[0];
  const auto norms = l2_norm_rows(reshape(g, {n, per}));
  return mean_all(square(add_scalar(norms, T(-1))));
}

template <typename T>
Tensor<T> gradient_penalty(const DiscriminatorModel<T>& d, const Tensor<T>& real_pack,
                           const Tensor<T>& fake_pack, Rng& rng) {
  return gradient_penalty([&d](const Tensor<T>& x) { return discriminate(d, x); },
                          real_pack, fake_pack, rng);
}

// critic objective: mean fake score - mean real score + lambda * penalty;
// generated samples are detached so nothing reaches generator parameters
template <typename T>
struct CriticLossParts {
  Tensor<T> total;
  T mean_real = T(0);
  T mean_fake = T(0);
  T penalty = T(0);
};

template <typename T>
CriticLossParts<T> d_loss_parts(const GeneratorModel<T>& gen,
                                const DiscriminatorModel<T>& disc,
                                const Tensor<T>& real_pack, const Tensor<T>& z,
                                double lambda_gp, Rng& rng) {
  const i64 m = real_pack.dim(0);
  const i64 pack = real_pack.dim(1);
  const i64 size = real_pack.dim(2);
  if (z.dim(0) != m * pack) {
    shape_fail("d_loss", "z batch " + std::to_string(z.dim(0)) + " vs pack batch " +
                             std::to_string(m * pack));
  }
  Tensor<T> fake;
  {
    GradGuard off(false);
    fake = reshape(generate(gen, z), {m, pack, size, size, size});
  }
  const auto t_fake = mean_all(discriminate(disc, fake));
  const auto t_real = mean_all(discriminate(disc, real_pack));
  const auto penalty = gradient_penalty(disc, real_pack, fake, rng);
  const auto total = add(sub(t_fake, t_real), scale(penalty, static_cast<T>(lambda_gp)));
  return {total, t_real.item(), t_fake.item(), penalty.item()};
}

template <typename T>
Tensor<T> d_loss(const GeneratorModel<T>& gen, const DiscriminatorModel<T>& disc,
                 const Tensor<T>& real_pack, const Tensor<T>& z, double lambda_gp,
                 Rng& rng) {
  return d_loss_parts(gen, disc, real_pack, z, lambda_gp, rng).total;
}

// generator objective: negated mean critic score on fresh samples
template <typename T>
Tensor<T> g_loss(const GeneratorModel<T>& gen, const DiscriminatorModel<T>& disc,
                 const Tensor<T>& z) {
  const i64 pack = gen.cfg.pack_size;
  const i64 size = gen.cfg.output_size;
  if (z.dim(0) % pack != 0) {
    shape_fail("g_loss", "z batch " + std::to_string(z.dim(0)) +
                             " not divisible by pack size " + std::to_string(pack));
  }
  const auto fake = reshape(generate(gen, z), {z.dim(0) / pack, pack, size, size, size});
  return neg(mean_all(discriminate(disc, fake)));
}

namespace detail {

// packs of consecutive samples after a fresh shuffle of the index list
inline Tensor<float> draw_real_pack(const std::vector<VoxelGrid>& data, i64 batch,
                                    i64 pack_size, i64 size, std::vector<i64>& indices,
                                    Rng& rng) {
  rng.shuffle(indices.begin(), indices.end());
  const i64 vol = size * size * size;
  std::vector<float> out(static_cast<std::size_t>(batch * pack_size * vol));
  for (i64 s = 0; s < batch * pack_size; ++s) {
    const auto& grid = data[static_cast<std::size_t>(indices[static_cast<std::size_t>(s)])];
    std::copy(grid.data.begin(), grid.data.end(), out.begin() + s * vol);
  }
  return Tensor<float>::from({batch, pack_size, size, size, size}, std::move(out));
}

inline void check_finite(float value, const char* term, i64 step) {
  if (!std::isfinite(value)) {
    throw std::runtime_error("train: non-finite " + std::string(term) + " at step " +
                             std::to_string(step));
  }
}

}  // namespace detail

struct StepRecord {
  i64 step = 0;
  float d_loss = 0.0f;
  float g_loss = 0.0f;
  float wasserstein = 0.0f;
  double wall_time_s = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> trace;
  i64 critic_updates = 0;
  i64 generator_updates = 0;
};

inline constexpr const char* kTrainLogHeader =
    "step,d_loss,g_loss,wasserstein_estimate,wall_time_s";

inline std::string format_step_record(const StepRecord& r) {
  return std::to_string(r.step) + "," + csv::fmt(r.d_loss) + "," + csv::fmt(r.g_loss) +
         "," + csv::fmt(r.wasserstein) + "," + csv::fmt(r.wall_time_s);
}

// Runs max_steps critic updates, one generator update after every n_critic-th.
// Writes one CSV row per step when log_csv is set, and a checkpoint every
// checkpoint_every steps (plus the final state) when checkpoint_dir is set.
inline TrainResult train(GeneratorModel<float>& gen, DiscriminatorModel<float>& disc,
                         const std::vector<VoxelGrid>& data, const TrainConfig& cfg,
                         const std::filesystem::path& log_csv = {},
                         const std::filesystem::path& checkpoint_dir = {}) {
  cfg.validate();
  if (!(gen.cfg == disc.cfg)) {
    throw std::invalid_argument("train: generator and critic configs differ");
  }
  const i64 size = gen.cfg.output_size;
  const i64 pack = gen.cfg.pack_size;
  const i64 need = pack * cfg.batch;
  if (static_cast<i64>(data.size()) < need) {
    throw std::invalid_argument("train: dataset has " + std::to_string(data.size()) +
                                " samples, one batch needs " + std::to_string(need));
  }
  for (const auto& g : data) {
    if (g.dims.nx != size || g.dims.ny != size || g.dims.nz != size) {
      throw std::invalid_argument("train: sample dims " + std::to_string(g.dims.nx) + "x" +
                                  std::to_string(g.dims.ny) + "x" + std::to_string(g.dims.nz) +
                                  " do not match model size " + std::to_string(size));
    }
  }

  Rng rng(cfg.seed);
  std::vector<i64> indices(data.size());
  std::iota(indices.begin(), indices.end(), i64{0});

  auto g_refs = parameter_refs(gen);
  auto d_refs = parameter_refs(disc);
  auto g_adam = AdamState<float>::for_model(gen);
  auto d_adam = AdamState<float>::for_model(disc);

  std::ofstream log;
  if (!log_csv.empty()) {
    log.open(log_csv, std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open log " + log_csv.string());
    log << kTrainLogHeader << '\n' << std::flush;
  }
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);
  auto maybe_checkpoint = [&](i64 step) {
    if (checkpoint_dir.empty()) return;
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06lld.ckpt", static_cast<long long>(step));
    save_checkpoint(checkpoint_dir / name, gen, disc);
  };

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();

  // baseline generator loss so early rows carry a real value
  float last_g_loss;
  {
    GradGuard off(false);
    const auto z = sample_latent<float>(rng, need, gen.cfg.latent_dim, cfg.z_variance);
    last_g_loss = g_loss(gen, disc, z).item();
  }
  detail::check_finite(last_g_loss, "g_loss", 0);

  for (i64 step = 1; step <= cfg.max_steps; ++step) {
    // critic update; the generator only supplies detached samples
    const auto real = detail::draw_real_pack(data, cfg.batch, pack, size, indices, rng);
    const auto z = sample_latent<float>(rng, need, gen.cfg.latent_dim, cfg.z_variance);
    const auto parts = d_loss_parts(gen, disc, real, z, cfg.lambda_gp, rng);
    detail::check_finite(parts.penalty, "gradient_penalty", step);
    detail::check_finite(parts.total.item(), "d_loss", step);
    const float wasserstein = parts.mean_real - parts.mean_fake;
    detail::check_finite(wasserstein, "wasserstein_estimate", step);

    adam_update(d_refs, grad(parts.total, parameters(disc)), d_adam, cfg.lr, cfg.beta1,
                cfg.beta2, cfg.eps_adam);
    ++result.critic_updates;

    if (step % cfg.n_critic == 0) {
      const auto zg = sample_latent<float>(rng, need, gen.cfg.latent_dim, cfg.z_variance);
      const auto gl = g_loss(gen, disc, zg);
      last_g_loss = gl.item();
      detail::check_finite(last_g_loss, "g_loss", step);
      adam_update(g_refs, grad(gl, parameters(gen)), g_adam, cfg.lr, cfg.beta1,
                  cfg.beta2, cfg.eps_adam);
      ++result.generator_updates;
    }

    StepRecord rec;
    rec.step = step;
    rec.d_loss = parts.total.item();
    rec.g_loss = last_g_loss;
    rec.wasserstein = wasserstein;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.trace.push_back(rec);
    if (log.is_open()) log << format_step_record(rec) << '\n' << std::flush;

    if (step % cfg.checkpoint_every == 0 || step == cfg.max_steps) maybe_checkpoint(step);
  }
  return result;
}

}  // namespace voxgan
