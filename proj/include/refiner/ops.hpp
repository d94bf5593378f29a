#pragma once

#include <cstddef>
#include <vector>

#include "refiner/tape.hpp"
#include "refiner/tensor.hpp"

// Differentiable primitives recorded on a Tape. Every op has a hand-written
// backward pass; see tests/test_tensor_core.cpp for the finite-difference checks.
namespace refiner {

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

/// x[m x n] + bias[m] broadcast along columns.
template <typename T>
Var add_bias(Tape<T>& tape, Var x, Var bias);

template <typename T>
Var transpose(Tape<T>& tape, Var x);

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape);

/// Softmax over the last axis of (scale * x), max-subtracted.
template <typename T>
Var softmax_rows(Tape<T>& tape, Var x, T scale);

/// Normalizes each row (last axis) then applies gamma/beta.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-6));

/// Exact (erf) GELU.
template <typename T>
Var gelu(Tape<T>& tape, Var x);

/// Mean over all elements; returns a rank-0 tensor.
template <typename T>
Var mean(Tape<T>& tape, Var x);

/// Rows [begin, end) of a 2-D tensor.
template <typename T>
Var slice_rows(Tape<T>& tape, Var x, std::size_t begin, std::size_t end);

template <typename T>
Var concat_rows(Tape<T>& tape, const std::vector<Var>& parts);

/// Columns [begin, end) of a 2-D tensor.
template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end);

template <typename T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts);

/// Zero-padded same-size cross-correlation of one n x m map with a k x k kernel.
template <typename T>
Var conv2d_single_channel(Tape<T>& tape, Var map, Var kernel);

/// 1-D correlation along each row (the column index j moves).
template <typename T>
Var conv1d_rows(Tape<T>& tape, Var map, Var kernel);

/// 1-D correlation along each column (the row index i moves).
template <typename T>
Var conv1d_cols(Tape<T>& tape, Var map, Var kernel);

/// maps[H x n x m] correlated per head with kernels[H x k x k].
template <typename T>
Var headwise_conv2d(Tape<T>& tape, Var maps, Var kernels);

/// maps[H x n x m]; kernels[H x 2 x k] hold a row kernel then a column kernel,
/// applied in that order.
template <typename T>
Var headwise_rowcol_conv(Tape<T>& tape, Var maps, Var kernels);

/// maps[H x N x N]. The first `prefix` columns of every row are copied through;
/// the remaining N - prefix entries form a g x g grid that is correlated with
/// the head's k x k kernel.
template <typename T>
Var headwise_spatial_conv(Tape<T>& tape, Var maps, Var kernels, std::size_t prefix);

/// Label-smoothed cross entropy of a logit vector; returns a rank-0 loss.
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::size_t label, T smoothing = T(0));

}  // namespace refiner
