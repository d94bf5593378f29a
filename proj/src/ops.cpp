#include "refiner/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "refiner/kernels.hpp"

namespace refiner {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

template <typename T>
const Tensor<T>& require_rank(const Tape<T>& tape, Var v, std::size_t rank, const char* op) {
  const Tensor<T>& t = tape.value(v);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
  return t;
}

template <typename T>
Var finish(Tape<T>& tape, const char* op, Tensor<T> out, std::span<const Var> inputs,
           typename Tape<T>::BackwardFn backward) {
  REFINER_CHECK_FINITE(out, op);
  return tape.record(op, std::move(out), inputs, std::move(backward));
}

template <typename T>
Var finish(Tape<T>& tape, const char* op, Tensor<T> out, std::initializer_list<Var> inputs,
           typename Tape<T>::BackwardFn backward) {
  return finish<T>(tape, op, std::move(out), std::span<const Var>(inputs.begin(), inputs.size()),
                   std::move(backward));
}

void require_odd(std::size_t k, const char* op) {
  if (k % 2 == 0) throw ConfigError(std::string(op) + ": kernel size must be odd, got " + std::to_string(k));
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = require_rank(tape, a, 2, "matmul");
  const Tensor<T>& bv = require_rank(tape, b, 2, "matmul");
  const std::size_t m = av.dim(0), p = av.dim(1), q = bv.dim(1);
  if (bv.dim(0) != p) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor<T> out(Shape{m, q});
  kernels::matmul_nn_acc<T>(av.data(), bv.data(), out.data(), m, p, q);
  return finish<T>(tape, "matmul", std::move(out), {a, b},
                   [a, b, m, p, q](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     if (t.requires_grad(a)) {
                       kernels::matmul_nt_acc<T>(g.data(), t.value(b).data(), t.grad_buffer(a).data(), m, q, p);
                     }
                     if (t.requires_grad(b)) {
                       kernels::matmul_tn_acc<T>(t.value(a).data(), g.data(), t.grad_buffer(b).data(), p, m, q);
                     }
                   });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return finish<T>(tape, "add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data()) v *= factor;
  return finish<T>(tape, "scale", std::move(out), {x},
                   [x, factor](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     auto gx = t.grad_buffer(x).data();
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
                   });
}

template <typename T>
Var add_bias(Tape<T>& tape, Var x, Var bias) {
  const Tensor<T>& xv = require_rank(tape, x, 2, "add_bias");
  const Tensor<T>& bv = tape.value(bias);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (bv.size() != m) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match rows of " + shape_str(xv.shape()));
  }
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[i];
  return finish<T>(tape, "add_bias", std::move(out), {x, bias},
                   [x, bias, m, n](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     t.accumulate(x, g);
                     if (t.requires_grad(bias)) {
                       auto gb = t.grad_buffer(bias).data();
                       for (std::size_t i = 0; i < m; ++i) {
                         T acc = 0;
                         for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j];
                         gb[i] += acc;
                       }
                     }
                   });
}

template <typename T>
Var transpose(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = require_rank(tape, x, 2, "transpose");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return finish<T>(tape, "transpose", std::move(out), {x},
                   [x, m, n](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     auto gx = t.grad_buffer(x).data();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
                   });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  return finish<T>(tape, "reshape", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    t.accumulate(x, g.reshaped(t.value(x).shape()));
  });
}

template <typename T>
Var softmax_rows(Tape<T>& tape, Var x, T scale) {
  if (!(scale > T(0))) throw ConfigError("softmax_rows: scale must be positive");
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() == 0) throw DimensionError("softmax_rows: needs at least one axis");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data().data() + r * n;
    T* o = out.data().data() + r * n;
    T mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(r));
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(scale * (in[j] - mx));
      sum += o[j];
    }
    if (!std::isfinite(sum)) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(r));
    for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
  }
  return finish<T>(tape, "softmax_rows", std::move(out), {x},
                   [x, scale, n, rows](Tape<T>& t, const Tensor<T>& y, const Tensor<T>& g) {
                     auto gx = t.grad_buffer(x).data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const std::size_t o = r * n;
                       T dot = 0;
                       for (std::size_t j = 0; j < n; ++j) dot += g[o + j] * y[o + j];
                       for (std::size_t j = 0; j < n; ++j) gx[o + j] += scale * y[o + j] * (g[o + j] - dot);
                     }
                   });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps) {
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  if (xv.rank() == 0) throw DimensionError("layer_norm: needs at least one axis");
  const std::size_t d = xv.shape().back();
  if (gv.size() != d || bv.size() != d) {
    throw DimensionError("layer_norm: gamma " + shape_str(gv.shape()) + " / beta " + shape_str(bv.shape()) +
                         " do not match feature dim of " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.size() / d;
  std::vector<T> mu(rows), rstd(rows);
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data().data() + r * d;
    T m = 0;
    for (std::size_t j = 0; j < d; ++j) m += in[j];
    m /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - m) * (in[j] - m);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    mu[r] = m;
    rstd[r] = rs;
    T* o = out.data().data() + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = (in[j] - m) * rs * gv[j] + bv[j];
  }
  return finish<T>(
      tape, "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, rows, mu = std::move(mu), rstd = std::move(rstd)](Tape<T>& t, const Tensor<T>&,
                                                                             const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x);
        const Tensor<T>& gv = t.value(gamma);
        const bool want_x = t.requires_grad(x);
        const bool want_gamma = t.requires_grad(gamma);
        const bool want_beta = t.requires_grad(beta);
        std::vector<T> xhat(d), gxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * d;
          T mean_g = 0, mean_gx = 0;
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xv[o + j] - mu[r]) * rstd[r];
            gxhat[j] = g[o + j] * gv[j];
            mean_g += gxhat[j];
            mean_gx += gxhat[j] * xhat[j];
          }
          mean_g /= static_cast<T>(d);
          mean_gx /= static_cast<T>(d);
          if (want_x) {
            auto gx = t.grad_buffer(x).data();
            for (std::size_t j = 0; j < d; ++j) gx[o + j] += rstd[r] * (gxhat[j] - mean_g - xhat[j] * mean_gx);
          }
          if (want_gamma) {
            auto gg = t.grad_buffer(gamma).data();
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[o + j] * xhat[j];
          }
          if (want_beta) {
            auto gb = t.grad_buffer(beta).data();
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[o + j];
          }
        }
      });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (auto& v : out.data()) v = T(0.5) * v * std::erfc(-v * inv_sqrt2);
  return finish<T>(tape, "gelu", std::move(out), {x}, [x, inv_sqrt2](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    auto gx = t.grad_buffer(x).data();
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * std::erfc(-v * inv_sqrt2);
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T acc = 0;
  for (T v : xv.data()) acc += v;
  const T inv = T(1) / static_cast<T>(xv.size());
  return finish<T>(tape, "mean", Tensor<T>::scalar(acc * inv), {x},
                   [x, inv](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     const T gi = g.item() * inv;
                     for (auto& v : t.grad_buffer(x).data()) v += gi;
                   });
}

template <typename T>
Var slice_rows(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = require_rank(tape, x, 2, "slice_rows");
  if (begin >= end || end > xv.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(1);
  std::vector<T> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                      xv.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return finish<T>(tape, "slice_rows", Tensor<T>(Shape{end - begin, n}, std::move(data)), {x},
                   [x, begin, n](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     auto gx = t.grad_buffer(x).data();
                     for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
                   });
}

template <typename T>
Var concat_rows(Tape<T>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = require_rank(tape, parts[0], 2, "concat_rows").dim(1);
  std::size_t rows = 0;
  for (Var p : parts) {
    const Tensor<T>& pv = require_rank(tape, p, 2, "concat_rows");
    if (pv.dim(1) != n) throw DimensionError("concat_rows: column mismatch at " + shape_str(pv.shape()));
    rows += pv.dim(0);
  }
  std::vector<T> data;
  data.reserve(rows * n);
  for (Var p : parts) data.insert(data.end(), tape.value(p).data().begin(), tape.value(p).data().end());
  return finish<T>(tape, "concat_rows", Tensor<T>(Shape{rows, n}, std::move(data)), std::span<const Var>(parts),
                   [parts](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     std::size_t offset = 0;
                     for (Var p : parts) {
                       const std::size_t len = t.value(p).size();
                       if (t.requires_grad(p)) {
                         auto gp = t.grad_buffer(p).data();
                         for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
                       }
                       offset += len;
                     }
                   });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = require_rank(tape, x, 2, "slice_cols");
  if (begin >= end || end > xv.dim(1)) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.dim(0), n = xv.dim(1), w = end - begin;
  Tensor<T> out(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * n + begin + j];
  return finish<T>(tape, "slice_cols", std::move(out), {x},
                   [x, begin, m, n, w](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     auto gx = t.grad_buffer(x).data();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
                   });
}

template <typename T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = require_rank(tape, parts[0], 2, "concat_cols").dim(0);
  std::size_t cols = 0;
  for (Var p : parts) {
    const Tensor<T>& pv = require_rank(tape, p, 2, "concat_cols");
    if (pv.dim(0) != m) throw DimensionError("concat_cols: row mismatch at " + shape_str(pv.shape()));
    cols += pv.dim(1);
  }
  Tensor<T> out(Shape{m, cols});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor<T>& pv = tape.value(p);
    const std::size_t w = pv.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * cols + offset + j] = pv[i * w + j];
    offset += w;
  }
  return finish<T>(tape, "concat_cols", std::move(out), std::span<const Var>(parts),
                   [parts, m, cols](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     std::size_t offset = 0;
                     for (Var p : parts) {
                       const std::size_t w = t.value(p).dim(1);
                       if (t.requires_grad(p)) {
                         auto gp = t.grad_buffer(p).data();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + offset + j];
                       }
                       offset += w;
                     }
                   });
}

namespace {

// Shared body for every correlation op: `heads` independent maps, each
// rows x cols, each with its own kh x kw kernel.
template <typename T>
Var headwise_correlate(Tape<T>& tape, const char* op, Var maps, Var kernels, std::size_t heads, std::size_t rows,
                       std::size_t cols, std::size_t kh, std::size_t kw) {
  const Tensor<T>& mv = tape.value(maps);
  const Tensor<T>& kv = tape.value(kernels);
  Tensor<T> out(mv.shape());
  const std::size_t plane = rows * cols, ksz = kh * kw;
  for (std::size_t h = 0; h < heads; ++h) {
    kernels::correlate2d<T>(mv.data().subspan(h * plane, plane), rows, cols, kv.data().subspan(h * ksz, ksz), kh, kw,
                            out.data().subspan(h * plane, plane));
  }
  return finish<T>(tape, op, std::move(out), {maps, kernels},
                   [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     const Tensor<T>& mv = t.value(maps);
                     const Tensor<T>& kv = t.value(kernels);
                     std::span<T> gm = t.requires_grad(maps) ? t.grad_buffer(maps).data() : std::span<T>{};
                     std::span<T> gk = t.requires_grad(kernels) ? t.grad_buffer(kernels).data() : std::span<T>{};
                     for (std::size_t h = 0; h < heads; ++h) {
                       kernels::correlate2d_backward<T>(
                           mv.data().subspan(h * plane, plane), rows, cols, kv.data().subspan(h * ksz, ksz), kh, kw,
                           g.data().subspan(h * plane, plane), gm.empty() ? gm : gm.subspan(h * plane, plane),
                           gk.empty() ? gk : gk.subspan(h * ksz, ksz));
                     }
                   });
}

}  // namespace

template <typename T>
Var conv2d_single_channel(Tape<T>& tape, Var map, Var kernel) {
  const Tensor<T>& mv = require_rank(tape, map, 2, "conv2d_single_channel");
  const Tensor<T>& kv = require_rank(tape, kernel, 2, "conv2d_single_channel");
  const std::size_t k = kv.dim(0);
  if (kv.dim(1) != k) throw DimensionError("conv2d_single_channel: kernel must be square, got " + shape_str(kv.shape()));
  require_odd(k, "conv2d_single_channel");
  return headwise_correlate<T>(tape, "conv2d_single_channel", map, kernel, 1, mv.dim(0), mv.dim(1), k, k);
}

template <typename T>
Var conv1d_rows(Tape<T>& tape, Var map, Var kernel) {
  const Tensor<T>& mv = require_rank(tape, map, 2, "conv1d_rows");
  const Tensor<T>& kv = require_rank(tape, kernel, 1, "conv1d_rows");
  require_odd(kv.size(), "conv1d_rows");
  return headwise_correlate<T>(tape, "conv1d_rows", map, kernel, 1, mv.dim(0), mv.dim(1), 1, kv.size());
}

template <typename T>
Var conv1d_cols(Tape<T>& tape, Var map, Var kernel) {
  const Tensor<T>& mv = require_rank(tape, map, 2, "conv1d_cols");
  const Tensor<T>& kv = require_rank(tape, kernel, 1, "conv1d_cols");
  require_odd(kv.size(), "conv1d_cols");
  return headwise_correlate<T>(tape, "conv1d_cols", map, kernel, 1, mv.dim(0), mv.dim(1), kv.size(), 1);
}

template <typename T>
Var headwise_conv2d(Tape<T>& tape, Var maps, Var kernels) {
  const Tensor<T>& mv = require_rank(tape, maps, 3, "headwise_conv2d");
  const Tensor<T>& kv = require_rank(tape, kernels, 3, "headwise_conv2d");
  const std::size_t k = kv.dim(1);
  if (kv.dim(0) != mv.dim(0) || kv.dim(2) != k) {
    throw DimensionError("headwise_conv2d: kernels " + shape_str(kv.shape()) + " do not match maps " +
                         shape_str(mv.shape()));
  }
  require_odd(k, "headwise_conv2d");
  return headwise_correlate<T>(tape, "headwise_conv2d", maps, kernels, mv.dim(0), mv.dim(1), mv.dim(2), k, k);
}

template <typename T>
Var headwise_rowcol_conv(Tape<T>& tape, Var maps, Var kernels) {
  const Tensor<T>& mv = require_rank(tape, maps, 3, "headwise_rowcol_conv");
  const Tensor<T>& kv = require_rank(tape, kernels, 3, "headwise_rowcol_conv");
  const std::size_t heads = mv.dim(0), rows = mv.dim(1), cols = mv.dim(2), k = kv.dim(2);
  if (kv.dim(0) != heads || kv.dim(1) != 2) {
    throw DimensionError("headwise_rowcol_conv: kernels " + shape_str(kv.shape()) + " do not match maps " +
                         shape_str(mv.shape()));
  }
  require_odd(k, "headwise_rowcol_conv");
  const std::size_t plane = rows * cols;
  Tensor<T> out(mv.shape());
  std::vector<T> tmp(plane);
  for (std::size_t h = 0; h < heads; ++h) {
    auto w = kv.data().subspan(h * 2 * k, 2 * k);
    kernels::correlate2d<T>(mv.data().subspan(h * plane, plane), rows, cols, w.subspan(0, k), 1, k, tmp);
    kernels::correlate2d<T>(tmp, rows, cols, w.subspan(k, k), k, 1, out.data().subspan(h * plane, plane));
  }
  return finish<T>(tape, "headwise_rowcol_conv", std::move(out), {maps, kernels},
                   [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     const Tensor<T>& mv = t.value(maps);
                     const Tensor<T>& kv = t.value(kernels);
                     std::span<T> gm = t.requires_grad(maps) ? t.grad_buffer(maps).data() : std::span<T>{};
                     std::span<T> gk = t.requires_grad(kernels) ? t.grad_buffer(kernels).data() : std::span<T>{};
                     std::vector<T> tmp(plane), gtmp(plane);
                     for (std::size_t h = 0; h < heads; ++h) {
                       auto w = kv.data().subspan(h * 2 * k, 2 * k);
                       auto in = mv.data().subspan(h * plane, plane);
                       kernels::correlate2d<T>(in, rows, cols, w.subspan(0, k), 1, k, tmp);
                       std::fill(gtmp.begin(), gtmp.end(), T{0});
                       kernels::correlate2d_backward<T>(tmp, rows, cols, w.subspan(k, k), k, 1,
                                                        g.data().subspan(h * plane, plane), gtmp,
                                                        gk.empty() ? gk : gk.subspan(h * 2 * k + k, k));
                       kernels::correlate2d_backward<T>(in, rows, cols, w.subspan(0, k), 1, k, gtmp,
                                                        gm.empty() ? gm : gm.subspan(h * plane, plane),
                                                        gk.empty() ? gk : gk.subspan(h * 2 * k, k));
                     }
                   });
}

namespace {

std::size_t exact_sqrt(std::size_t v) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(v))));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

}  // namespace

template <typename T>
Var headwise_spatial_conv(Tape<T>& tape, Var maps, Var kernels, std::size_t prefix) {
  const Tensor<T>& mv = require_rank(tape, maps, 3, "headwise_spatial_conv");
  const Tensor<T>& kv = require_rank(tape, kernels, 3, "headwise_spatial_conv");
  const std::size_t heads = mv.dim(0), rows = mv.dim(1), cols = mv.dim(2), k = kv.dim(1);
  if (kv.dim(0) != heads || kv.dim(2) != k) {
    throw DimensionError("headwise_spatial_conv: kernels " + shape_str(kv.shape()) + " do not match maps " +
                         shape_str(mv.shape()));
  }
  require_odd(k, "headwise_spatial_conv");
  if (prefix >= cols) throw ConfigError("headwise_spatial_conv: prefix leaves no spatial tokens");
  const std::size_t spatial = cols - prefix;
  const std::size_t grid = exact_sqrt(spatial);
  if (grid * grid != spatial) {
    throw ConfigError("headwise_spatial_conv: " + std::to_string(spatial) + " spatial tokens is not a perfect square");
  }
  const std::size_t ksz = k * k;
  Tensor<T> out(mv.shape());
  for (std::size_t h = 0; h < heads; ++h) {
    auto w = kv.data().subspan(h * ksz, ksz);
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t base = (h * rows + i) * cols;
      for (std::size_t j = 0; j < prefix; ++j) out[base + j] = mv[base + j];
      kernels::correlate2d<T>(mv.data().subspan(base + prefix, spatial), grid, grid, w, k, k,
                              out.data().subspan(base + prefix, spatial));
    }
  }
  return finish<T>(tape, "headwise_spatial_conv", std::move(out), {maps, kernels},
                   [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     const Tensor<T>& mv = t.value(maps);
                     const Tensor<T>& kv = t.value(kernels);
                     std::span<T> gm = t.requires_grad(maps) ? t.grad_buffer(maps).data() : std::span<T>{};
                     std::span<T> gk = t.requires_grad(kernels) ? t.grad_buffer(kernels).data() : std::span<T>{};
                     for (std::size_t h = 0; h < heads; ++h) {
                       auto w = kv.data().subspan(h * ksz, ksz);
                       for (std::size_t i = 0; i < rows; ++i) {
                         const std::size_t base = (h * rows + i) * cols;
                         if (!gm.empty())
                           for (std::size_t j = 0; j < prefix; ++j) gm[base + j] += g[base + j];
                         kernels::correlate2d_backward<T>(mv.data().subspan(base + prefix, spatial), grid, grid, w, k,
                                                          k, g.data().subspan(base + prefix, spatial),
                                                          gm.empty() ? gm : gm.subspan(base + prefix, spatial),
                                                          gk.empty() ? gk : gk.subspan(h * ksz, ksz));
                       }
                     }
                   });
}

template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::size_t label, T smoothing) {
  const Tensor<T>& zv = tape.value(logits);
  const std::size_t c = zv.size();
  if (label >= c) throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range");
  if (smoothing < T(0) || smoothing >= T(1)) throw ConfigError("cross_entropy: smoothing must be in [0, 1)");
  T mx = zv[0];
  for (T v : zv.data()) mx = std::max(mx, v);
  if (!std::isfinite(mx)) throw NumericError("cross_entropy: non-finite logits");
  T sum = 0;
  for (T v : zv.data()) sum += std::exp(v - mx);
  const T lse = mx + std::log(sum);
  const T off = smoothing / static_cast<T>(c);
  const T on = T(1) - smoothing + off;
  T loss = 0;
  for (std::size_t i = 0; i < c; ++i) loss -= (i == label ? on : off) * (zv[i] - lse);
  return finish<T>(tape, "cross_entropy", Tensor<T>::scalar(loss), {logits},
                   [logits, label, lse, on, off, c](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                     const Tensor<T>& zv = t.value(logits);
                     auto gz = t.grad_buffer(logits).data();
                     const T gs = g.item();
                     for (std::size_t i = 0; i < c; ++i) {
                       gz[i] += gs * (std::exp(zv[i] - lse) - (i == label ? on : off));
                     }
                   });
}

#define REFINER_INSTANTIATE_OPS(T)                                                          \
  template Var matmul<T>(Tape<T>&, Var, Var);                                               \
  template Var add<T>(Tape<T>&, Var, Var);                                                  \
  template Var scale<T>(Tape<T>&, Var, T);                                                  \
  template Var add_bias<T>(Tape<T>&, Var, Var);                                             \
  template Var transpose<T>(Tape<T>&, Var);                                                 \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                            \
  template Var softmax_rows<T>(Tape<T>&, Var, T);                                           \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                   \
  template Var gelu<T>(Tape<T>&, Var);                                                      \
  template Var mean<T>(Tape<T>&, Var);                                                      \
  template Var slice_rows<T>(Tape<T>&, Var, std::size_t, std::size_t);                      \
  template Var concat_rows<T>(Tape<T>&, const std::vector<Var>&);                           \
  template Var slice_cols<T>(Tape<T>&, Var, std::size_t, std::size_t);                      \
  template Var concat_cols<T>(Tape<T>&, const std::vector<Var>&);                           \
  template Var conv2d_single_channel<T>(Tape<T>&, Var, Var);                                \
  template Var conv1d_rows<T>(Tape<T>&, Var, Var);                                          \
  template Var conv1d_cols<T>(Tape<T>&, Var, Var);                                          \
  template Var headwise_conv2d<T>(Tape<T>&, Var, Var);                                      \
  template Var headwise_rowcol_conv<T>(Tape<T>&, Var, Var);                                 \
  template Var headwise_spatial_conv<T>(Tape<T>&, Var, Var, std::size_t);                   \
  template Var cross_entropy<T>(Tape<T>&, Var, std::size_t, T);

REFINER_INSTANTIATE_OPS(float)
REFINER_INSTANTIATE_OPS(double)

}  // namespace refiner
