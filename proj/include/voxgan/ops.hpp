#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "voxgan/tensor.hpp"

// Differentiable tensor ops. Every backward is assembled from ops in this
// file, so gradients stay differentiable and second derivatives (needed by
// the gradient penalty) come out of the same machinery. Layout is row-major
// with the last axis fastest; volumes are [N,C,D,H,W].

namespace voxgan {

using i64 = std::int64_t;

namespace detail {

inline void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) shape_fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T, typename F>
Tensor<T> elementwise_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f,
                             std::function<std::vector<Tensor<T>>(
                                 const Tensor<T>&, const std::vector<Tensor<T>>&)>
                                 backward) {
  check_same_shape(op, a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  return Tensor<T>::make_op(op, a.shape(), std::move(out), {a, b}, std::move(backward));
}

template <typename T, typename F>
Tensor<T> elementwise_unary(const char* op, const Tensor<T>& a, F f,
                            std::function<std::vector<Tensor<T>>(
                                const Tensor<T>&, const std::vector<Tensor<T>>&)>
                                backward) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return Tensor<T>::make_op(op, a.shape(), std::move(out), {a}, std::move(backward));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        return std::vector<Tensor<T>>{g, g};
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        return std::vector<Tensor<T>>{g, neg(g)};
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        return std::vector<Tensor<T>>{mul(g, ps[1]), mul(g, ps[0])};
      });
}

template <typename T>
Tensor<T> div_elem(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        auto inv = recip(ps[1]);
        return std::vector<Tensor<T>>{mul(g, inv),
                                      neg(mul(g, mul(ps[0], mul(inv, inv))))};
      });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return detail::elementwise_unary<T>(
      "neg", a, [](T x) { return -x; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        return std::vector<Tensor<T>>{neg(g)};
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::elementwise_unary<T>(
      "scale", a, [c](T x) { return c * x; },
      [c](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        return std::vector<Tensor<T>>{scale(g, c)};
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::elementwise_unary<T>(
      "add_scalar", a, [c](T x) { return x + c; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        return std::vector<Tensor<T>>{g};
      });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::elementwise_unary<T>(
      "square", a, [](T x) { return x * x; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        return std::vector<Tensor<T>>{mul(g, scale(ps[0], T(2)))};
      });
}

template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
  return detail::elementwise_unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        // d sqrt(x) = 1 / (2 sqrt(x)); recomputed so it stays differentiable
        return std::vector<Tensor<T>>{
            mul(g, scale(recip(sqrt_elem(ps[0])), T(0.5)))};
      });
}

template <typename T>
Tensor<T> recip(const Tensor<T>& a) {
  return detail::elementwise_unary<T>(
      "recip", a, [](T x) { return T(1) / x; },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        auto inv = recip(ps[0]);
        return std::vector<Tensor<T>>{neg(mul(g, mul(inv, inv)))};
      });
}

// Piecewise linear, so treating the active-side mask as a constant in the
// backward is exact for higher derivatives too.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return detail::elementwise_unary<T>(
      "leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        const auto& xv = ps[0].values();
        std::vector<T> mask(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) mask[i] = xv[i] > T(0) ? T(1) : slope;
        return std::vector<Tensor<T>>{mul(g, Tensor<T>::from(ps[0].shape(), std::move(mask)))};
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return leaky_relu(a, T(0));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::elementwise_unary<T>(
      "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        auto y = sigmoid(ps[0]);
        auto dy = mul(y, add_scalar(neg(y), T(1)));  // y (1 - y)
        return std::vector<Tensor<T>>{mul(g, dy)};
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    shape_fail("reshape", shape_str(a.shape()) + " to " + shape_str(shape) +
                              " changes element count");
  }
  Shape prev = a.shape();
  return Tensor<T>::make_op(
      "reshape", std::move(shape), a.values(), {a},
      [prev](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        return std::vector<Tensor<T>>{reshape(g, prev)};
      });
}

// --- dense linear algebra -------------------------------------------------

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) shape_fail("transpose2d", "expected rank 2, got " + shape_str(a.shape()));
  const i64 n = a.dim(0), m = a.dim(1);
  const auto& av = a.values();
  std::vector<T> out(static_cast<std::size_t>(n * m));
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < m; ++j) out[static_cast<std::size_t>(j * n + i)] = av[static_cast<std::size_t>(i * m + j)];
  return Tensor<T>::make_op("transpose2d", {m, n}, std::move(out), {a},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{transpose2d(g)};
                            });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    shape_fail("matmul", "expected rank 2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    shape_fail("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  }
  const i64 n = a.dim(0), k = a.dim(1), m = b.dim(1);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(static_cast<std::size_t>(n * m), T(0));
  for (i64 i = 0; i < n; ++i) {
    for (i64 p = 0; p < k; ++p) {
      const T x = av[static_cast<std::size_t>(i * k + p)];
      const T* brow = bv.data() + p * m;
      T* orow = out.data() + i * m;
      for (i64 j = 0; j < m; ++j) orow[j] += x * brow[j];
    }
  }
  return Tensor<T>::make_op("matmul", {n, m}, std::move(out), {a, b},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
                              return std::vector<Tensor<T>>{
                                  matmul(g, transpose2d(ps[1])),
                                  matmul(transpose2d(ps[0]), g)};
                            });
}

// --- broadcast / reduction pairs -------------------------------------------
// Each broadcast op and its matching sum are each other's backward.

namespace detail {

// dims 0 and 2+ collapsed; dim 1 is the bias axis
template <typename T>
std::pair<i64, i64> bias_extents(const char* op, const Shape& s) {
  if (s.size() < 2) shape_fail(op, "expected rank >= 2, got " + shape_str(s));
  i64 inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], inner};
}

}  // namespace detail

template <typename T>
Tensor<T> bias_sum(const Tensor<T>& x);

template <typename T>
Tensor<T> broadcast_bias(const Tensor<T>& b, Shape target) {
  if (b.rank() != 1) shape_fail("broadcast_bias", "bias must be rank 1, got " + shape_str(b.shape()));
  const auto [outer, inner] = detail::bias_extents<T>("broadcast_bias", target);
  const i64 c = b.dim(0);
  if (target[1] != c) {
    shape_fail("broadcast_bias", "bias " + shape_str(b.shape()) + " vs target " + shape_str(target));
  }
  const auto& bv = b.values();
  std::vector<T> out(static_cast<std::size_t>(outer * c * inner));
  std::size_t at = 0;
  for (i64 n = 0; n < outer; ++n)
    for (i64 j = 0; j < c; ++j) {
      const T v = bv[static_cast<std::size_t>(j)];
      for (i64 i = 0; i < inner; ++i) out[at++] = v;
    }
  return Tensor<T>::make_op("broadcast_bias", std::move(target), std::move(out), {b},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{bias_sum(g)};
                            });
}

template <typename T>
Tensor<T> bias_sum(const Tensor<T>& x) {
  const auto [outer, inner] = detail::bias_extents<T>("bias_sum", x.shape());
  const i64 c = x.dim(1);
  const auto& xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(c), T(0));
  std::size_t at = 0;
  for (i64 n = 0; n < outer; ++n)
    for (i64 j = 0; j < c; ++j) {
      T acc = T(0);
      for (i64 i = 0; i < inner; ++i) acc += xv[at++];
      out[static_cast<std::size_t>(j)] += acc;
    }
  Shape prev = x.shape();
  return Tensor<T>::make_op("bias_sum", {c}, std::move(out), {x},
                            [prev](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{broadcast_bias(g, prev)};
                            });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  return add(x, broadcast_bias(b, x.shape()));
}

template <typename T>
Tensor<T> spatial_sum(const Tensor<T>& x);

// [N,C] stretched over the spatial dims of `target`
template <typename T>
Tensor<T> broadcast_channel(const Tensor<T>& s, Shape target) {
  if (s.rank() != 2) shape_fail("broadcast_channel", "expected rank 2, got " + shape_str(s.shape()));
  if (target.size() < 3 || target[0] != s.dim(0) || target[1] != s.dim(1)) {
    shape_fail("broadcast_channel", shape_str(s.shape()) + " vs target " + shape_str(target));
  }
  i64 inner = 1;
  for (std::size_t i = 2; i < target.size(); ++i) inner *= target[i];
  const auto& sv = s.values();
  std::vector<T> out(sv.size() * static_cast<std::size_t>(inner));
  std::size_t at = 0;
  for (std::size_t nc = 0; nc < sv.size(); ++nc) {
    const T v = sv[nc];
    for (i64 i = 0; i < inner; ++i) out[at++] = v;
  }
  return Tensor<T>::make_op("broadcast_channel", std::move(target), std::move(out), {s},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{spatial_sum(g)};
                            });
}

// [N,C,spatial...] -> [N,C]
template <typename T>
Tensor<T> spatial_sum(const Tensor<T>& x) {
  if (x.rank() < 3) shape_fail("spatial_sum", "expected rank >= 3, got " + shape_str(x.shape()));
  const i64 nc = x.dim(0) * x.dim(1);
  const i64 inner = x.size() / nc;
  const auto& xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(nc));
  for (i64 j = 0; j < nc; ++j) {
    T acc = T(0);
    const T* row = xv.data() + j * inner;
    for (i64 i = 0; i < inner; ++i) acc += row[i];
    out[static_cast<std::size_t>(j)] = acc;
  }
  Shape prev = x.shape();
  return Tensor<T>::make_op("spatial_sum", {x.dim(0), x.dim(1)}, std::move(out), {x},
                            [prev](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{broadcast_channel(g, prev)};
                            });
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& x);

// [N] stretched over the trailing dims of `target`
template <typename T>
Tensor<T> broadcast_batch(const Tensor<T>& s, Shape target) {
  if (s.rank() != 1) shape_fail("broadcast_batch", "expected rank 1, got " + shape_str(s.shape()));
  if (target.empty() || target[0] != s.dim(0)) {
    shape_fail("broadcast_batch", shape_str(s.shape()) + " vs target " + shape_str(target));
  }
  const i64 inner = numel(target) / target[0];
  const auto& sv = s.values();
  std::vector<T> out(sv.size() * static_cast<std::size_t>(inner));
  std::size_t at = 0;
  for (std::size_t n = 0; n < sv.size(); ++n) {
    const T v = sv[n];
    for (i64 i = 0; i < inner; ++i) out[at++] = v;
  }
  return Tensor<T>::make_op("broadcast_batch", std::move(target), std::move(out), {s},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{row_sum(g)};
                            });
}

// [N,...] -> [N]
template <typename T>
Tensor<T> row_sum(const Tensor<T>& x) {
  if (x.rank() < 1) shape_fail("row_sum", "expected rank >= 1");
  const i64 n = x.dim(0);
  const i64 inner = x.size() / n;
  const auto& xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (i64 j = 0; j < n; ++j) {
    T acc = T(0);
    const T* row = xv.data() + j * inner;
    for (i64 i = 0; i < inner; ++i) acc += row[i];
    out[static_cast<std::size_t>(j)] = acc;
  }
  Shape prev = x.shape();
  return Tensor<T>::make_op("row_sum", {n}, std::move(out), {x},
                            [prev](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{broadcast_batch(g, prev)};
                            });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);

template <typename T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, Shape target) {
  if (s.size() != 1) shape_fail("broadcast_scalar", "expected scalar, got " + shape_str(s.shape()));
  const auto n = static_cast<std::size_t>(numel(target));
  return Tensor<T>::make_op("broadcast_scalar", std::move(target),
                            std::vector<T>(n, s.values()[0]), {s},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{sum_all(g)};
                            });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  const auto& xv = x.values();
  T acc = T(0);
  for (T v : xv) acc += v;
  Shape prev = x.shape();
  return Tensor<T>::make_op("sum_all", {1}, std::vector<T>{acc}, {x},
                            [prev](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
                              return std::vector<Tensor<T>>{broadcast_scalar(g, prev)};
                            });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.size()));
}

// --- scaling by per-channel / per-row factors ------------------------------

// x [N,C,spatial...] scaled by s [N,C]
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() < 3 || s.rank() != 2 || x.dim(0) != s.dim(0) || x.dim(1) != s.dim(1)) {
    shape_fail("channel_scale", shape_str(x.shape()) + " vs " + shape_str(s.shape()));
  }
  const i64 nc = x.dim(0) * x.dim(1);
  const i64 inner = x.size() / nc;
  const auto& xv = x.values();
  const auto& sv = s.values();
  std::vector<T> out(xv.size());
  std::size_t at = 0;
  for (i64 j = 0; j < nc; ++j) {
    const T v = sv[static_cast<std::size_t>(j)];
    for (i64 i = 0; i < inner; ++i, ++at) out[at] = xv[at] * v;
  }
  return Tensor<T>::make_op("channel_scale", x.shape(), std::move(out), {x, s},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
                              return std::vector<Tensor<T>>{
                                  channel_scale(g, ps[1]),
                                  spatial_sum(mul(g, ps[0]))};
                            });
}

// x [N,...] scaled by s [N]
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() < 2 || s.rank() != 1 || x.dim(0) != s.dim(0)) {
    shape_fail("scale_rows", shape_str(x.shape()) + " vs " + shape_str(s.shape()));
  }
  const i64 n = x.dim(0);
  const i64 inner = x.size() / n;
  const auto& xv = x.values();
  const auto& sv = s.values();
  std::vector<T> out(xv.size());
  std::size_t at = 0;
  for (i64 j = 0; j < n; ++j) {
    const T v = sv[static_cast<std::size_t>(j)];
    for (i64 i = 0; i < inner; ++i, ++at) out[at] = xv[at] * v;
  }
  return Tensor<T>::make_op("scale_rows", x.shape(), std::move(out), {x, s},
                            [](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
                              return std::vector<Tensor<T>>{
                                  scale_rows(g, ps[1]),
                                  row_sum(mul(g, ps[0]))};
                            });
}

// --- derived reductions -----------------------------------------------------

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  const i64 inner = x.size() / (x.dim(0) * x.dim(1));
  return scale(spatial_sum(x), T(1) / static_cast<T>(inner));
}

template <typename T>
Tensor<T> row_dot(const Tensor<T>& a, const Tensor<T>& b) {
  return row_sum(mul(a, b));
}

// per-sample Euclidean norm over all non-batch dims, [N,...] -> [N]
template <typename T>
Tensor<T> l2_norm_rows(const Tensor<T>& x) {
  return sqrt_elem(row_dot(x, x));
}

// --- normalization ----------------------------------------------------------

// per-sample per-channel statistics over the spatial dims
template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_stats(const Tensor<T>& x, T eps) {
  auto mu = channel_mean(x);
  auto centered = sub(x, broadcast_channel(mu, x.shape()));
  auto var = channel_mean(square(centered));
  auto sd = sqrt_elem(add_scalar(var, eps));
  return {mu, sd};
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  auto mu = channel_mean(x);
  auto centered = sub(x, broadcast_channel(mu, x.shape()));
  auto var = channel_mean(square(centered));
  auto inv_sd = recip(sqrt_elem(add_scalar(var, eps)));
  return channel_scale(centered, inv_sd);
}

// ys * normalize(x) + yb with ys, yb of shape [N,C]
template <typename T>
Tensor<T> adain(const Tensor<T>& x, const Tensor<T>& ys, const Tensor<T>& yb, T eps) {
  auto normed = instance_norm(x, eps);
  return add(channel_scale(normed, ys), broadcast_channel(yb, x.shape()));
}

// --- convolution ------------------------------------------------------------

namespace detail {

struct ConvGeom {
  i64 n, ci, co;
  i64 in[3], out[3], k[3];
  i64 stride, pad;
};

inline i64 conv_out_extent(i64 in, i64 k, i64 s, i64 p) { return (in + 2 * p - k) / s + 1; }

// valid output range [lo,hi) for a kernel offset: 0 <= o*s - p + kk < in
inline std::pair<i64, i64> conv_span(i64 in, i64 out, i64 kk, i64 s, i64 p) {
  i64 lo = p > kk ? (p - kk + s - 1) / s : 0;
  i64 num = in - 1 - kk + p;
  i64 hi = num < 0 ? 0 : num / s + 1;
  if (hi > out) hi = out;
  if (lo > hi) lo = hi;
  return {lo, hi};
}

inline ConvGeom conv_geometry(const char* op, const Shape& x, const Shape& w, i64 stride,
                              i64 pad) {
  if (x.size() != 5 || w.size() != 5) {
    shape_fail(op, "expected rank 5 input and weight, got " + shape_str(x) + " and " +
                       shape_str(w));
  }
  if (stride < 1 || pad < 0) shape_fail(op, "stride must be >= 1 and padding >= 0");
  if (x[1] != w[1]) {
    shape_fail(op, "input channels " + shape_str(x) + " vs weight " + shape_str(w));
  }
  ConvGeom geo;
  geo.n = x[0];
  geo.ci = x[1];
  geo.co = w[0];
  geo.stride = stride;
  geo.pad = pad;
  for (int d = 0; d < 3; ++d) {
    geo.in[d] = x[2 + static_cast<std::size_t>(d)];
    geo.k[d] = w[2 + static_cast<std::size_t>(d)];
    geo.out[d] = conv_out_extent(geo.in[d], geo.k[d], stride, pad);
    if (geo.out[d] < 1) {
      shape_fail(op, "kernel " + shape_str(w) + " too large for input " + shape_str(x));
    }
  }
  return geo;
}

// y[n,co,o] = sum_{ci,kk} x[n,ci,o*s-p+kk] w[co,ci,kk]
template <typename T>
void conv_forward_kernel(const T* x, const T* w, T* y, const ConvGeom& g) {
  const i64 in_c = g.in[0] * g.in[1] * g.in[2];
  const i64 out_c = g.out[0] * g.out[1] * g.out[2];
  const i64 k_c = g.k[0] * g.k[1] * g.k[2];
  for (i64 n = 0; n < g.n; ++n) {
    for (i64 co = 0; co < g.co; ++co) {
      T* yb = y + (n * g.co + co) * out_c;
      for (i64 ci = 0; ci < g.ci; ++ci) {
        const T* xb = x + (n * g.ci + ci) * in_c;
        const T* wb = w + (co * g.ci + ci) * k_c;
        for (i64 kd = 0; kd < g.k[0]; ++kd) {
          const auto [dlo, dhi] = conv_span(g.in[0], g.out[0], kd, g.stride, g.pad);
          for (i64 kh = 0; kh < g.k[1]; ++kh) {
            const auto [hlo, hhi] = conv_span(g.in[1], g.out[1], kh, g.stride, g.pad);
            for (i64 kw = 0; kw < g.k[2]; ++kw) {
              const auto [wlo, whi] = conv_span(g.in[2], g.out[2], kw, g.stride, g.pad);
              const T wv = wb[(kd * g.k[1] + kh) * g.k[2] + kw];
              const i64 off = kw - g.pad;
              for (i64 od = dlo; od < dhi; ++od) {
                const i64 id = od * g.stride - g.pad + kd;
                for (i64 oh = hlo; oh < hhi; ++oh) {
                  const i64 ih = oh * g.stride - g.pad + kh;
                  const T* xrow = xb + (id * g.in[1] + ih) * g.in[2];
                  T* yrow = yb + (od * g.out[1] + oh) * g.out[2];
                  for (i64 ow = wlo; ow < whi; ++ow) {
                    yrow[ow] += wv * xrow[ow * g.stride + off];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// gx[n,ci,o*s-p+kk] += gy[n,co,o] w[co,ci,kk]; also the transposed-conv forward
template <typename T>
void conv_input_grad_kernel(const T* gy, const T* w, T* gx, const ConvGeom& g) {
  const i64 in_c = g.in[0] * g.in[1] * g.in[2];
  const i64 out_c = g.out[0] * g.out[1] * g.out[2];
  const i64 k_c = g.k[0] * g.k[1] * g.k[2];
  for (i64 n = 0; n < g.n; ++n) {
    for (i64 co = 0; co < g.co; ++co) {
      const T* gyb = gy + (n * g.co + co) * out_c;
      for (i64 ci = 0; ci < g.ci; ++ci) {
        T* gxb = gx + (n * g.ci + ci) * in_c;
        const T* wb = w + (co * g.ci + ci) * k_c;
        for (i64 kd = 0; kd < g.k[0]; ++kd) {
          const auto [dlo, dhi] = conv_span(g.in[0], g.out[0], kd, g.stride, g.pad);
          for (i64 kh = 0; kh < g.k[1]; ++kh) {
            const auto [hlo, hhi] = conv_span(g.in[1], g.out[1], kh, g.stride, g.pad);
            for (i64 kw = 0; kw < g.k[2]; ++kw) {
              const auto [wlo, whi] = conv_span(g.in[2], g.out[2], kw, g.stride, g.pad);
              const T wv = wb[(kd * g.k[1] + kh) * g.k[2] + kw];
              const i64 off = kw - g.pad;
              for (i64 od = dlo; od < dhi; ++od) {
                const i64 id = od * g.stride - g.pad + kd;
                for (i64 oh = hlo; oh < hhi; ++oh) {
                  const i64 ih = oh * g.stride - g.pad + kh;
                  T* gxrow = gxb + (id * g.in[1] + ih) * g.in[2];
                  const T* gyrow = gyb + (od * g.out[1] + oh) * g.out[2];
                  for (i64 ow = wlo; ow < whi; ++ow) {
                    gxrow[ow * g.stride + off] += wv * gyrow[ow];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// gw[co,ci,kk] = sum_{n,o} x[n,ci,o*s-p+kk] gy[n,co,o]
template <typename T>
void conv_weight_grad_kernel(const T* x, const T* gy, T* gw, const ConvGeom& g) {
  const i64 in_c = g.in[0] * g.in[1] * g.in[2];
  const i64 out_c = g.out[0] * g.out[1] * g.out[2];
  const i64 k_c = g.k[0] * g.k[1] * g.k[2];
  for (i64 n = 0; n < g.n; ++n) {
    for (i64 co = 0; co < g.co; ++co) {
      const T* gyb = gy + (n * g.co + co) * out_c;
      for (i64 ci = 0; ci < g.ci; ++ci) {
        const T* xb = x + (n * g.ci + ci) * in_c;
        T* gwb = gw + (co * g.ci + ci) * k_c;
        for (i64 kd = 0; kd < g.k[0]; ++kd) {
          const auto [dlo, dhi] = conv_span(g.in[0], g.out[0], kd, g.stride, g.pad);
          for (i64 kh = 0; kh < g.k[1]; ++kh) {
            const auto [hlo, hhi] = conv_span(g.in[1], g.out[1], kh, g.stride, g.pad);
            for (i64 kw = 0; kw < g.k[2]; ++kw) {
              const auto [wlo, whi] = conv_span(g.in[2], g.out[2], kw, g.stride, g.pad);
              const i64 off = kw - g.pad;
              T acc = T(0);
              for (i64 od = dlo; od < dhi; ++od) {
                const i64 id = od * g.stride - g.pad + kd;
                for (i64 oh = hlo; oh < hhi; ++oh) {
                  const i64 ih = oh * g.stride - g.pad + kh;
                  const T* xrow = xb + (id * g.in[1] + ih) * g.in[2];
                  const T* gyrow = gyb + (od * g.out[1] + oh) * g.out[2];
                  for (i64 ow = wlo; ow < whi; ++ow) {
                    acc += xrow[ow * g.stride + off] * gyrow[ow];
                  }
                }
              }
              gwb[(kd * g.k[1] + kh) * g.k[2] + kw] += acc;
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv3d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, i64 stride, i64 pad,
                            Shape input_shape);
template <typename T>
Tensor<T> conv3d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, i64 stride, i64 pad,
                             Shape weight_shape);

// x [N,Ci,D,H,W], w [Co,Ci,kd,kh,kw]
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, i64 stride, i64 pad) {
  const auto geo = detail::conv_geometry("conv3d", x.shape(), w.shape(), stride, pad);
  Shape out_shape{geo.n, geo.co, geo.out[0], geo.out[1], geo.out[2]};
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)), T(0));
  detail::conv_forward_kernel(x.values().data(), w.values().data(), out.data(), geo);
  Shape x_shape = x.shape();
  Shape w_shape = w.shape();
  return Tensor<T>::make_op(
      "conv3d", std::move(out_shape), std::move(out), {x, w},
      [stride, pad, x_shape, w_shape](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        return std::vector<Tensor<T>>{
            conv3d_input_grad(g, ps[1], stride, pad, x_shape),
            conv3d_weight_grad(ps[0], g, stride, pad, w_shape)};
      });
}

// adjoint of conv3d in its input; gy [N,Co,out], w [Co,Ci,k] -> [N,Ci,in]
template <typename T>
Tensor<T> conv3d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, i64 stride, i64 pad,
                            Shape input_shape) {
  if (input_shape.size() != 5) {
    shape_fail("conv3d_input_grad", "input shape must be rank 5, got " + shape_str(input_shape));
  }
  auto geo = detail::conv_geometry("conv3d_input_grad", input_shape, w.shape(), stride, pad);
  Shape expect{geo.n, geo.co, geo.out[0], geo.out[1], geo.out[2]};
  if (gy.shape() != expect) {
    shape_fail("conv3d_input_grad", "gradient " + shape_str(gy.shape()) + " does not match conv output " +
                                        shape_str(expect));
  }
  std::vector<T> out(static_cast<std::size_t>(numel(input_shape)), T(0));
  detail::conv_input_grad_kernel(gy.values().data(), w.values().data(), out.data(), geo);
  Shape w_shape = w.shape();
  return Tensor<T>::make_op(
      "conv3d_input_grad", input_shape, std::move(out), {gy, w},
      [stride, pad, input_shape, w_shape](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        // d/dgy: conv of g with w; d/dw: weight grad with g as the input side
        return std::vector<Tensor<T>>{
            conv3d(g, ps[1], stride, pad),
            conv3d_weight_grad(g, ps[0], stride, pad, w_shape)};
      });
}

// adjoint of conv3d in its weight; x [N,Ci,in], gy [N,Co,out] -> [Co,Ci,k]
template <typename T>
Tensor<T> conv3d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, i64 stride, i64 pad,
                             Shape weight_shape) {
  if (weight_shape.size() != 5) {
    shape_fail("conv3d_weight_grad", "weight shape must be rank 5, got " + shape_str(weight_shape));
  }
  auto geo = detail::conv_geometry("conv3d_weight_grad", x.shape(), weight_shape, stride, pad);
  Shape expect{geo.n, geo.co, geo.out[0], geo.out[1], geo.out[2]};
  if (gy.shape() != expect) {
    shape_fail("conv3d_weight_grad", "gradient " + shape_str(gy.shape()) +
                                         " does not match conv output " + shape_str(expect));
  }
  std::vector<T> out(static_cast<std::size_t>(numel(weight_shape)), T(0));
  detail::conv_weight_grad_kernel(x.values().data(), gy.values().data(), out.data(), geo);
  Shape x_shape = x.shape();
  return Tensor<T>::make_op(
      "conv3d_weight_grad", weight_shape, std::move(out), {x, gy},
      [stride, pad, x_shape](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        return std::vector<Tensor<T>>{
            conv3d_input_grad(ps[1], g, stride, pad, x_shape),
            conv3d(ps[0], g, stride, pad)};
      });
}

// x [N,Ci,in], w [Ci,Co,k]; output extent (in-1)*stride - 2*pad + k
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, i64 stride, i64 pad) {
  if (x.rank() != 5 || w.rank() != 5) {
    shape_fail("conv_transpose3d", "expected rank 5 input and weight, got " +
                                       shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(0)) {
    shape_fail("conv_transpose3d",
               "input channels " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  Shape out_shape{x.dim(0), w.dim(1), 0, 0, 0};
  for (int d = 0; d < 3; ++d) {
    const i64 ext = (x.dim(2 + static_cast<std::size_t>(d)) - 1) * stride - 2 * pad +
                    w.dim(2 + static_cast<std::size_t>(d));
    if (ext < 1) {
      shape_fail("conv_transpose3d", "non-positive output extent for input " +
                                         shape_str(x.shape()) + " weight " + shape_str(w.shape()));
    }
    out_shape[2 + static_cast<std::size_t>(d)] = ext;
  }
  return conv3d_input_grad(x, w, stride, pad, std::move(out_shape));
}

// --- pooling ----------------------------------------------------------------

// Ties break toward the lowest linear index. The selection mask is treated as
// constant in the backward, which is exact away from ties.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, i64 kernel, i64 stride) {
  if (x.rank() != 5) shape_fail("maxpool3d", "expected rank 5, got " + shape_str(x.shape()));
  if (kernel < 1 || stride < 1) shape_fail("maxpool3d", "kernel and stride must be >= 1");
  const i64 nc = x.dim(0) * x.dim(1);
  i64 in[3], out[3];
  for (int d = 0; d < 3; ++d) {
    in[d] = x.dim(2 + static_cast<std::size_t>(d));
    if (kernel > in[d]) {
      shape_fail("maxpool3d", "kernel " + std::to_string(kernel) + " exceeds input " +
                                  shape_str(x.shape()));
    }
    out[d] = (in[d] - kernel) / stride + 1;
  }
  const i64 in_c = in[0] * in[1] * in[2];
  const i64 out_c = out[0] * out[1] * out[2];
  const auto& xv = x.values();
  std::vector<T> yv(static_cast<std::size_t>(nc * out_c));
  std::vector<i64> arg(static_cast<std::size_t>(nc * out_c));
  for (i64 c = 0; c < nc; ++c) {
    const T* xb = xv.data() + c * in_c;
    for (i64 od = 0; od < out[0]; ++od)
      for (i64 oh = 0; oh < out[1]; ++oh)
        for (i64 ow = 0; ow < out[2]; ++ow) {
          i64 best = -1;
          T bv = T(0);
          for (i64 kd = 0; kd < kernel; ++kd)
            for (i64 kh = 0; kh < kernel; ++kh)
              for (i64 kw = 0; kw < kernel; ++kw) {
                const i64 idx = ((od * stride + kd) * in[1] + oh * stride + kh) * in[2] +
                                ow * stride + kw;
                const T v = xb[idx];
                if (best < 0 || v > bv) {
                  best = idx;
                  bv = v;
                }
              }
          const i64 o = (od * out[1] + oh) * out[2] + ow;
          yv[static_cast<std::size_t>(c * out_c + o)] = bv;
          arg[static_cast<std::size_t>(c * out_c + o)] = c * in_c + best;
        }
  }
  Shape out_shape{x.dim(0), x.dim(1), out[0], out[1], out[2]};
  Shape in_shape = x.shape();
  const i64 in_total = x.size();
  return Tensor<T>::make_op(
      "maxpool3d", std::move(out_shape), std::move(yv), {x},
      [arg, in_shape, in_total](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        // scatter through a constant 0/1 selection matrix, kept differentiable
        // by building it as a matmul with the flattened gradient
        const i64 out_total = static_cast<i64>(arg.size());
        std::vector<T> sel(static_cast<std::size_t>(in_total * out_total), T(0));
        for (i64 o = 0; o < out_total; ++o) {
          sel[static_cast<std::size_t>(arg[static_cast<std::size_t>(o)] * out_total + o)] = T(1);
        }
        auto gflat = reshape(g, Shape{out_total, 1});
        auto m = Tensor<T>::from(Shape{in_total, out_total}, std::move(sel));
        return std::vector<Tensor<T>>{reshape(matmul(m, gflat), in_shape)};
      });
}

// --- concatenation along the channel axis -----------------------------------

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, i64 begin, i64 count);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) shape_fail("concat_channels", "no inputs");
  const Shape& first = parts[0].shape();
  if (first.size() < 2) shape_fail("concat_channels", "expected rank >= 2, got " + shape_str(first));
  i64 total_c = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size() || p.dim(0) != first[0]) {
      shape_fail("concat_channels", "incompatible " + shape_str(p.shape()) + " vs " + shape_str(first));
    }
    for (std::size_t d = 2; d < first.size(); ++d) {
      if (p.shape()[d] != first[d]) {
        shape_fail("concat_channels",
                   "incompatible " + shape_str(p.shape()) + " vs " + shape_str(first));
      }
    }
    total_c += p.dim(1);
  }
  Shape out_shape = first;
  out_shape[1] = total_c;
  i64 inner = 1;
  for (std::size_t d = 2; d < first.size(); ++d) inner *= first[d];
  const i64 n = first[0];
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  i64 c_at = 0;
  for (const auto& p : parts) {
    const i64 pc = p.dim(1);
    const auto& pv = p.values();
    for (i64 b = 0; b < n; ++b) {
      std::copy(pv.begin() + b * pc * inner, pv.begin() + (b + 1) * pc * inner,
                out.begin() + (b * total_c + c_at) * inner);
    }
    c_at += pc;
  }
  std::vector<i64> sizes;
  sizes.reserve(parts.size());
  for (const auto& p : parts) sizes.push_back(p.dim(1));
  return Tensor<T>::make_op(
      "concat_channels", std::move(out_shape), std::move(out), parts,
      [sizes](const Tensor<T>& g, const std::vector<Tensor<T>>&) {
        std::vector<Tensor<T>> gs;
        gs.reserve(sizes.size());
        i64 at = 0;
        for (i64 c : sizes) {
          gs.push_back(slice_channels(g, at, c));
          at += c;
        }
        return gs;
      });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, i64 begin, i64 count) {
  if (x.rank() < 2) shape_fail("slice_channels", "expected rank >= 2, got " + shape_str(x.shape()));
  if (begin < 0 || count < 1 || begin + count > x.dim(1)) {
    shape_fail("slice_channels", "range [" + std::to_string(begin) + "," +
                                     std::to_string(begin + count) + ") outside " +
                                     shape_str(x.shape()));
  }
  const i64 n = x.dim(0), c = x.dim(1);
  i64 inner = 1;
  for (std::size_t d = 2; d < x.rank(); ++d) inner *= x.shape()[d];
  Shape out_shape = x.shape();
  out_shape[1] = count;
  const auto& xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(n * count * inner));
  for (i64 b = 0; b < n; ++b) {
    std::copy(xv.begin() + (b * c + begin) * inner, xv.begin() + (b * c + begin + count) * inner,
              out.begin() + b * count * inner);
  }
  Shape in_shape = x.shape();
  return Tensor<T>::make_op(
      "slice_channels", std::move(out_shape), std::move(out), {x},
      [begin, count, in_shape](const Tensor<T>& g, const std::vector<Tensor<T>>& ps) {
        // embed the gradient back into a zero tensor of the input shape
        std::vector<Tensor<T>> parts;
        const i64 c = in_shape[1];
        if (begin > 0) {
          Shape lead = in_shape;
          lead[1] = begin;
          parts.push_back(Tensor<T>::zeros(lead));
        }
        parts.push_back(g);
        if (begin + count < c) {
          Shape tail = in_shape;
          tail[1] = c - begin - count;
          parts.push_back(Tensor<T>::zeros(tail));
        }
        (void)ps;
        return std::vector<Tensor<T>>{concat_channels(parts)};
      });
}

}  // namespace voxgan
