#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/csv.hpp"
#include "voxgan/gan.hpp"
#include "voxgan/ops.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/voxel_grid.hpp"

// Critic-feature evaluation protocol: activations of critic layers 2-4 are
// max-pooled (kernel 8/4/2, stride 4/2/1, largest kernel to earliest layer),
// flattened, and concatenated. Kernels clamp to the layer's spatial extent so
// the same recipe works at every model scale. On top of that: a seeded
// one-vs-rest linear SVM and an l2 nearest-neighbor lookup.

namespace voxgan {

struct PoolSpec {
  i64 layer;  // critic layer index, 0-based
  i64 kernel;
  i64 stride;
};

inline const std::vector<PoolSpec>& feature_pooling() {
  static const std::vector<PoolSpec> specs{{1, 8, 4}, {2, 4, 2}, {3, 2, 1}};
  return specs;
}

// spatial extent of critic layer output: input halves per strided layer
inline i64 critic_layer_extent(const ModelConfig& cfg, i64 layer) {
  i64 s = cfg.output_size;
  for (i64 i = 0; i <= layer && i < 4; ++i) s /= 2;
  return s;
}

inline i64 pooled_extent(i64 spatial, i64 kernel, i64 stride) {
  const i64 k = std::min(kernel, spatial);
  return (spatial - k) / stride + 1;
}

// pure function of the config; extraction output length must match
inline i64 feature_length(const ModelConfig& cfg) {
  const auto chans = cfg.discriminator_channels();
  i64 total = 0;
  for (const auto& spec : feature_pooling()) {
    const i64 p = pooled_extent(critic_layer_extent(cfg, spec.layer), spec.kernel, spec.stride);
    total += chans[static_cast<std::size_t>(spec.layer)] * p * p * p;
  }
  return total;
}

// single sample replicated across the pack channels, layers pooled and
// concatenated in layer order
template <typename T>
std::vector<T> extract_features(const DiscriminatorModel<T>& d, const VoxelGrid& grid) {
  const i64 s = d.cfg.output_size;
  if (grid.dims.nx != s || grid.dims.ny != s || grid.dims.nz != s) {
    shape_fail("extract_features", "grid " + std::to_string(grid.dims.nx) + "x" +
                                       std::to_string(grid.dims.ny) + "x" +
                                       std::to_string(grid.dims.nz) + " vs model size " +
                                       std::to_string(s));
  }
  GradGuard off(false);
  const i64 vol = s * s * s;
  std::vector<T> packed(static_cast<std::size_t>(d.cfg.pack_size * vol));
  for (i64 c = 0; c < d.cfg.pack_size; ++c) {
    for (i64 j = 0; j < vol; ++j) {
      packed[static_cast<std::size_t>(c * vol + j)] = static_cast<T>(grid.data[static_cast<std::size_t>(j)]);
    }
  }
  CriticTrace<T> trace;
  discriminate(d, Tensor<T>::from({1, d.cfg.pack_size, s, s, s}, std::move(packed)), &trace);

  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(feature_length(d.cfg)));
  for (const auto& spec : feature_pooling()) {
    const auto& layer = trace.layers[static_cast<std::size_t>(spec.layer)];
    const i64 k = std::min(spec.kernel, layer.dim(2));
    const auto pooled = maxpool3d(layer, k, spec.stride);
    const auto& v = pooled.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

template <typename T>
std::vector<std::vector<T>> extract_features(const DiscriminatorModel<T>& d,
                                             const std::vector<VoxelGrid>& grids) {
  std::vector<std::vector<T>> out;
  out.reserve(grids.size());
  for (const auto& g : grids) out.push_back(extract_features(d, g));
  return out;
}

// --- linear SVM -------------------------------------------------------------

struct LinearSvm {
  std::vector<int> classes;                 // sorted, unique
  std::vector<std::vector<double>> weights;  // per class, bias last
  bool standardized = false;
  std::vector<double> mean, scale;  // per dimension when standardized
};

namespace detail {

inline double svm_margin(const LinearSvm& model, const std::vector<double>& x,
                         std::size_t cls) {
  const auto& w = model.weights[cls];
  double m = w.back();
  for (std::size_t j = 0; j < x.size(); ++j) m += w[j] * x[j];
  return m;
}

template <typename T>
std::vector<double> svm_input(const LinearSvm& model, const std::vector<T>& x) {
  std::vector<double> out(x.begin(), x.end());
  if (model.standardized) {
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = (out[j] - model.mean[j]) / model.scale[j];
    }
  }
  return out;
}

}  // namespace detail

// One-vs-rest hinge loss by projected subgradient descent with a 1/t rate
// and seeded per-epoch shuffling; deterministic for a fixed seed. Returns the
// average of the second half of the iterates, which is much less sensitive to
// where the last epoch happens to stop than the final iterate alone.
template <typename T>
LinearSvm svm_train(const std::vector<std::vector<T>>& features,
                    const std::vector<int>& labels, double c = 1.0, int epochs = 30,
                    std::uint64_t seed = 1, bool standardize = false) {
  if (features.empty() || features.size() != labels.size()) {
    throw std::invalid_argument("svm_train: need matching non-empty features and labels");
  }
  const std::size_t dim = features[0].size();
  for (const auto& f : features) {
    if (f.size() != dim) throw std::invalid_argument("svm_train: inconsistent feature lengths");
  }
  if (c <= 0 || epochs < 1) throw std::invalid_argument("svm_train: c > 0, epochs >= 1");

  LinearSvm model;
  model.classes = labels;
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()),
                      model.classes.end());
  if (model.classes.size() < 2) {
    throw std::invalid_argument("svm_train: need at least two classes");
  }

  const std::size_t n = features.size();
  std::vector<std::vector<double>> x(n);
  if (standardize) {
    model.standardized = true;
    model.mean.assign(dim, 0.0);
    model.scale.assign(dim, 0.0);
    for (const auto& f : features) {
      for (std::size_t j = 0; j < dim; ++j) model.mean[j] += static_cast<double>(f[j]);
    }
    for (std::size_t j = 0; j < dim; ++j) model.mean[j] /= static_cast<double>(n);
    for (const auto& f : features) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double dlt = static_cast<double>(f[j]) - model.mean[j];
        model.scale[j] += dlt * dlt;
      }
    }
    for (std::size_t j = 0; j < dim; ++j) {
      model.scale[j] = std::sqrt(model.scale[j] / static_cast<double>(n));
      if (model.scale[j] == 0.0) model.scale[j] = 1.0;  // constant dimension
    }
  }
  for (std::size_t i = 0; i < n; ++i) x[i] = detail::svm_input(model, features[i]);

  const double lambda = 1.0 / (c * static_cast<double>(n));
  model.weights.assign(model.classes.size(), std::vector<double>(dim + 1, 0.0));

  const std::size_t total = static_cast<std::size_t>(epochs) * n;
  const std::size_t avg_from = total / 2;  // average iterates with t > avg_from

  for (std::size_t cls = 0; cls < model.classes.size(); ++cls) {
    auto& w = model.weights[cls];
    std::vector<double> wsum(dim + 1, 0.0);
    std::size_t t = 0, averaged = 0;
    Rng cls_rng(derive_seed(seed, "svm-class-" + std::to_string(model.classes[cls])));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      cls_rng.shuffle(order.begin(), order.end());
      for (std::size_t i : order) {
        ++t;
        const double eta = 1.0 / (lambda * static_cast<double>(t));
        const double y = labels[i] == model.classes[cls] ? 1.0 : -1.0;
        double margin = w.back();
        for (std::size_t j = 0; j < dim; ++j) margin += w[j] * x[i][j];
        const double decay = 1.0 - eta * lambda;
        for (std::size_t j = 0; j < dim; ++j) w[j] *= decay;
        if (y * margin < 1.0) {
          for (std::size_t j = 0; j < dim; ++j) w[j] += eta * y * x[i][j];
          w.back() += eta * y;  // unregularized bias
        }
        if (t > avg_from) {
          ++averaged;
          for (std::size_t j = 0; j <= dim; ++j) wsum[j] += w[j];
        }
      }
    }
    for (std::size_t j = 0; j <= dim; ++j) w[j] = wsum[j] / static_cast<double>(averaged);
  }
  return model;
}

// argmax margin; ties resolve to the lowest class index
template <typename T>
int svm_predict_one(const LinearSvm& model, const std::vector<T>& feature) {
  if (model.weights.empty() || feature.size() + 1 != model.weights[0].size()) {
    throw std::invalid_argument("svm_predict: feature length does not match model");
  }
  const auto x = detail::svm_input(model, feature);
  std::size_t best = 0;
  double best_margin = detail::svm_margin(model, x, 0);
  for (std::size_t cls = 1; cls < model.classes.size(); ++cls) {
    const double m = detail::svm_margin(model, x, cls);
    if (m > best_margin) {
      best_margin = m;
      best = cls;
    }
  }
  return model.classes[best];
}

template <typename T>
std::vector<int> svm_predict(const LinearSvm& model,
                             const std::vector<std::vector<T>>& features) {
  std::vector<int> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(svm_predict_one(model, f));
  return out;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("accuracy: size mismatch or empty");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// --- nearest neighbor -------------------------------------------------------

struct NeighborHit {
  std::size_t index = 0;
  double distance = 0.0;
};

template <typename T>
NeighborHit nearest_neighbor(const std::vector<T>& query,
                             const std::vector<std::vector<T>>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("nearest_neighbor: empty corpus");
  NeighborHit best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].size() != query.size()) {
      throw std::invalid_argument("nearest_neighbor: length mismatch at corpus item " +
                                  std::to_string(i));
    }
    double d2 = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) {
      const double dlt = static_cast<double>(query[j]) - static_cast<double>(corpus[i][j]);
      d2 += dlt * dlt;
    }
    if (d2 < best.distance) {
      best.distance = d2;
      best.index = i;
    }
  }
  best.distance = std::sqrt(best.distance);
  return best;
}

// --- CSV --------------------------------------------------------------------

// one row per sample, integer label first, then the feature values
template <typename T>
void save_features(const std::filesystem::path& path,
                   const std::vector<std::vector<T>>& features,
                   const std::vector<int>& labels) {
  if (features.size() != labels.size()) {
    throw std::invalid_argument("save_features: feature/label count mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_features: cannot open " + path.string());
  for (std::size_t i = 0; i < features.size(); ++i) {
    out << labels[i];
    for (const T v : features[i]) out << ',' << csv::fmt(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("save_features: write failed for " + path.string());
}

template <typename T>
std::pair<std::vector<std::vector<T>>, std::vector<int>> load_features(
    const std::filesystem::path& path) {
  std::vector<std::vector<T>> features;
  std::vector<int> labels;
  for (const auto& cells : csv::read_rows(path)) {
    if (cells.size() < 2) {
      throw std::runtime_error("load_features: row with fewer than two columns");
    }
    labels.push_back(static_cast<int>(csv::to_int(cells[0])));
    std::vector<T> row;
    row.reserve(cells.size() - 1);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      row.push_back(static_cast<T>(csv::to_double(cells[j])));
    }
    features.push_back(std::move(row));
  }
  return {std::move(features), std::move(labels)};
}

}  // namespace voxgan
