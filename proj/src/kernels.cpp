#include "refiner/kernels.hpp"

#include <algorithm>
#include <vector>

namespace refiner::kernels {

template <typename T>
void matmul_nn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t p,
                   std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * q;
    const T* arow = a.data() + i * p;
    for (std::size_t k = 0; k < p; ++k) {
      const T aik = arow[k];
      const T* brow = b.data() + k * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <typename T>
void matmul_nt_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t p,
                   std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * p;
    for (std::size_t j = 0; j < q; ++j) {
      const T* brow = b.data() + j * p;
      T acc = 0;
      for (std::size_t k = 0; k < p; ++k) acc += arow[k] * brow[k];
      c[i * q + j] += acc;
    }
  }
}

template <typename T>
void matmul_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t p,
                   std::size_t q) {
  for (std::size_t k = 0; k < p; ++k) {
    const T* arow = a.data() + k * m;
    const T* brow = b.data() + k * q;
    for (std::size_t i = 0; i < m; ++i) {
      const T aki = arow[i];
      T* crow = c.data() + i * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += aki * brow[j];
    }
  }
}

template <typename T>
void correlate2d(std::span<const T> in, std::size_t rows, std::size_t cols, std::span<const T> w, std::size_t kh,
                 std::size_t kw, std::span<T> out) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(kw / 2);
  const auto nr = static_cast<std::ptrdiff_t>(rows);
  const auto nc = static_cast<std::ptrdiff_t>(cols);
  std::fill(out.begin(), out.end(), T{0});
  for (std::ptrdiff_t a = 0; a < static_cast<std::ptrdiff_t>(kh); ++a) {
    const std::ptrdiff_t di = a - ph;
    const std::ptrdiff_t i_lo = std::max<std::ptrdiff_t>(0, -di);
    const std::ptrdiff_t i_hi = std::min<std::ptrdiff_t>(nr, nr - di);
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(kw); ++b) {
      const T wab = w[static_cast<std::size_t>(a * static_cast<std::ptrdiff_t>(kw) + b)];
      const std::ptrdiff_t dj = b - pw;
      const std::ptrdiff_t j_lo = std::max<std::ptrdiff_t>(0, -dj);
      const std::ptrdiff_t j_hi = std::min<std::ptrdiff_t>(nc, nc - dj);
      for (std::ptrdiff_t i = i_lo; i < i_hi; ++i) {
        T* orow = out.data() + i * nc;
        const T* irow = in.data() + (i + di) * nc + dj;
        for (std::ptrdiff_t j = j_lo; j < j_hi; ++j) orow[j] += wab * irow[j];
      }
    }
  }
}

template <typename T>
void correlate2d_backward(std::span<const T> in, std::size_t rows, std::size_t cols, std::span<const T> w,
                          std::size_t kh, std::size_t kw, std::span<const T> grad_out, std::span<T> grad_in,
                          std::span<T> grad_w) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(kw / 2);
  const auto nr = static_cast<std::ptrdiff_t>(rows);
  const auto nc = static_cast<std::ptrdiff_t>(cols);
  for (std::ptrdiff_t a = 0; a < static_cast<std::ptrdiff_t>(kh); ++a) {
    const std::ptrdiff_t di = a - ph;
    const std::ptrdiff_t i_lo = std::max<std::ptrdiff_t>(0, -di);
    const std::ptrdiff_t i_hi = std::min<std::ptrdiff_t>(nr, nr - di);
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(kw); ++b) {
      const std::size_t widx = static_cast<std::size_t>(a * static_cast<std::ptrdiff_t>(kw) + b);
      const T wab = w[widx];
      const std::ptrdiff_t dj = b - pw;
      const std::ptrdiff_t j_lo = std::max<std::ptrdiff_t>(0, -dj);
      const std::ptrdiff_t j_hi = std::min<std::ptrdiff_t>(nc, nc - dj);
      T gw = 0;
      for (std::ptrdiff_t i = i_lo; i < i_hi; ++i) {
        const T* grow = grad_out.data() + i * nc;
        const T* irow = in.data() + (i + di) * nc + dj;
        T* girow = grad_in.empty() ? nullptr : grad_in.data() + (i + di) * nc + dj;
        for (std::ptrdiff_t j = j_lo; j < j_hi; ++j) {
          gw += grow[j] * irow[j];
          if (girow) girow[j] += wab * grow[j];
        }
      }
      if (!grad_w.empty()) grad_w[widx] += gw;
    }
  }
}

namespace {

// Lower source index and blend weight along one axis.
struct Tap {
  std::size_t lo, hi;
  double frac;
};

Tap source_tap(std::size_t dst, std::size_t in, std::size_t out) {
  double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in - 1));
  const auto lo = static_cast<std::size_t>(s);
  return {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
}

}  // namespace

template <typename T>
void bilinear_plane(std::span<const T> in, std::size_t h, std::size_t w, std::span<T> out, std::size_t oh,
                    std::size_t ow) {
  if (h == oh && w == ow) {
    std::copy(in.begin(), in.end(), out.begin());
    return;
  }
  std::vector<Tap> cols(ow);
  for (std::size_t x = 0; x < ow; ++x) cols[x] = source_tap(x, w, ow);
  for (std::size_t y = 0; y < oh; ++y) {
    const Tap ty = source_tap(y, h, oh);
    const T* r0 = in.data() + ty.lo * w;
    const T* r1 = in.data() + ty.hi * w;
    for (std::size_t x = 0; x < ow; ++x) {
      const Tap& tx = cols[x];
      const double top = r0[tx.lo] + tx.frac * (double(r0[tx.hi]) - r0[tx.lo]);
      const double bottom = r1[tx.lo] + tx.frac * (double(r1[tx.hi]) - r1[tx.lo]);
      out[y * ow + x] = static_cast<T>(top + ty.frac * (bottom - top));
    }
  }
}

#define REFINER_INSTANTIATE_KERNELS(T)                                                                        \
  template void matmul_nn_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,          \
                                 std::size_t, std::size_t);                                                   \
  template void matmul_nt_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,          \
                                 std::size_t, std::size_t);                                                   \
  template void matmul_tn_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,          \
                                 std::size_t, std::size_t);                                                   \
  template void correlate2d<T>(std::span<const T>, std::size_t, std::size_t, std::span<const T>, std::size_t, \
                               std::size_t, std::span<T>);                                                    \
  template void correlate2d_backward<T>(std::span<const T>, std::size_t, std::size_t, std::span<const T>,    \
                                        std::size_t, std::size_t, std::span<const T>, std::span<T>,          \
                                        std::span<T>);                                                        \
  template void bilinear_plane<T>(std::span<const T>, std::size_t, std::size_t, std::span<T>, std::size_t,   \
                                  std::size_t);

REFINER_INSTANTIATE_KERNELS(float)
REFINER_INSTANTIATE_KERNELS(double)

}  // namespace refiner::kernels
