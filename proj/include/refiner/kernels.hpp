#pragma once

#include <cstddef>
#include <span>

namespace refiner::kernels {

// Raw row-major loops shared by forward and backward passes. All `_acc`
// routines accumulate into the destination.

/// C[m x q] += A[m x p] * B[p x q]
template <typename T>
void matmul_nn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t p,
                   std::size_t q);

/// C[m x q] += A[m x p] * B[q x p]^T
template <typename T>
void matmul_nt_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t p,
                   std::size_t q);

/// C[m x q] += A[p x m]^T * B[p x q]
template <typename T>
void matmul_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t p,
                   std::size_t q);

/// Zero-padded, stride-1 cross-correlation of a rows x cols map with an odd
/// kh x kw kernel: out[i,j] = sum_{a,b} w[a,b] * in[i - kh/2 + a, j - kw/2 + b].
template <typename T>
void correlate2d(std::span<const T> in, std::size_t rows, std::size_t cols, std::span<const T> w, std::size_t kh,
                 std::size_t kw, std::span<T> out);

/// Backward of correlate2d: accumulates into grad_in and grad_w.
template <typename T>
void correlate2d_backward(std::span<const T> in, std::size_t rows, std::size_t cols, std::span<const T> w,
                          std::size_t kh, std::size_t kw, std::span<const T> grad_out, std::span<T> grad_in,
                          std::span<T> grad_w);

/// Bilinear resampling of one h x w plane to oh x ow with half-pixel centers:
/// source coordinate = (dst + 0.5) * in / out - 0.5, clamped to the border.
template <typename T>
void bilinear_plane(std::span<const T> in, std::size_t h, std::size_t w, std::span<T> out, std::size_t oh,
                    std::size_t ow);

}  // namespace refiner::kernels
