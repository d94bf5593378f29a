#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refiner/params.hpp"
#include "refiner/random.hpp"
#include "refiner/tape.hpp"
#include "refiner/tensor.hpp"

namespace refiner {

/// How the head-wise kernel is applied to an attention map.
///  Direct:         k x k correlation over the n x n matrix itself.
///  SpatialReshape: each row is folded into its sqrt(n) x sqrt(n) patch grid,
///                  correlated, and flattened back.
///  RowCol:         a 1-D row kernel followed by a 1-D column kernel.
enum class ConvMode { Direct, SpatialReshape, RowCol };

enum class Stage { Raw, Expanded, Convolved, Reduced };

const char* conv_mode_name(ConvMode mode);
ConvMode parse_conv_mode(std::string_view name);
const char* stage_name(Stage stage);

struct RefinerConfig {
  std::size_t d_in = 0;
  std::size_t d = 0;  // projection dim; 0 means d_in
  std::size_t heads = 1;
  std::size_t ratio = 1;   // expanded heads = ratio * heads
  std::size_t kernel = 1;  // odd; 1 disables the convolution entirely
  ConvMode conv_mode = ConvMode::Direct;
  bool use_reduction = true;
  std::size_t share_next = 0;
  bool qkv_bias = true;
  bool refine = true;  // false gives plain multi-head self-attention
  // Leading tokens (class token) kept out of the spatial grid in SpatialReshape mode.
  std::size_t prefix_tokens = 0;

  std::size_t proj_dim() const { return d == 0 ? d_in : d; }
  std::size_t head_dim() const { return proj_dim() / heads; }
  std::size_t expanded_heads() const { return refine ? ratio * heads : heads; }
  bool has_kernels() const { return refine && kernel > 1; }
  bool has_reduction() const { return refine && use_reduction; }
  /// Head count of the maps fed to value aggregation.
  std::size_t aggregated_heads() const { return has_reduction() || !refine ? heads : expanded_heads(); }
  /// Row count of the concatenated per-head outputs, i.e. W_out's column count.
  std::size_t aggregated_dim() const { return aggregated_heads() * head_dim(); }
  Shape kernel_shape() const;

  void validate() const;  // throws ConfigError
};

/// Weights of one refiner attention layer. L is Tensor<T> for storage and Var
/// on a tape. Which optional members are meaningful is decided by the config:
/// biases iff qkv_bias, w_expand iff refine, kernels iff has_kernels(),
/// w_reduce iff has_reduction().
template <typename L>
struct RefinerWeights {
  L w_q, b_q, w_k, b_k, w_v, b_v;
  L w_expand, kernels, w_reduce;
  L w_out, b_out;
};

/// Calls f(name, member) for every member present under cfg, in a fixed order.
template <typename L, typename F>
void for_each_weight(const RefinerConfig& cfg, RefinerWeights<L>& w, F&& f) {
  f("w_q", w.w_q);
  if (cfg.qkv_bias) f("b_q", w.b_q);
  f("w_k", w.w_k);
  if (cfg.qkv_bias) f("b_k", w.b_k);
  f("w_v", w.w_v);
  if (cfg.qkv_bias) f("b_v", w.b_v);
  if (cfg.refine) f("w_expand", w.w_expand);
  if (cfg.has_kernels()) f("kernels", w.kernels);
  if (cfg.has_reduction()) f("w_reduce", w.w_reduce);
  f("w_out", w.w_out);
  f("b_out", w.b_out);
}

/// Linear weights ~ truncated normal (std 0.02), biases 0. W_expand copies head
/// h' mod H, W_reduce averages the r copies, kernels are a centered delta plus
/// N(0, kernel_noise^2); together these start the layer near vanilla MHSA.
template <typename T>
RefinerWeights<Tensor<T>> init_refiner_weights(const RefinerConfig& cfg, Rng& rng, double kernel_noise = 0.02);

/// Parameter count of one layer under cfg.
std::size_t refiner_param_count(const RefinerConfig& cfg);
/// Parameters added by expansion, convolution and reduction alone.
std::size_t refiner_overhead_params(const RefinerConfig& cfg);

template <typename T>
void add_refiner_weights(Parameters<T>& store, const std::string& prefix, const RefinerConfig& cfg,
                         RefinerWeights<Tensor<T>> w);

/// Looks up the tape handles of a layer stored under `prefix`.
template <typename T>
RefinerWeights<Var> refiner_vars(const Parameters<T>& store, const std::vector<Var>& vars, const std::string& prefix,
                                 const RefinerConfig& cfg);

template <typename T>
RefinerWeights<Var> bind_refiner(Tape<T>& tape, const RefinerConfig& cfg, const RefinerWeights<Tensor<T>>& w,
                                 bool trainable);

// ---------------------------------------------------------------------------
// Tape-level pipeline. Maps are [heads x n x n]; X and Y are [d_in x n].

struct RawMaps {
  Var maps;  // [H x n x n], rows sum to 1
  Var v;     // [d x n]
};

template <typename T>
RawMaps compute_attention_maps(Tape<T>& tape, Var x, const RefinerWeights<Var>& w, const RefinerConfig& cfg);

/// Head mixing: out[h] = sum_i mix[h, i] * maps[i]. Used for both expansion
/// and reduction.
template <typename T>
Var mix_heads(Tape<T>& tape, Var maps, Var mix);

template <typename T>
Var dla_apply(Tape<T>& tape, Var maps, Var kernels, ConvMode mode, std::size_t prefix_tokens);

/// Per-head aggregation V_h A_h^T, head concatenation, output projection.
/// Map head h uses value segment h mod H, so H' maps work without reduction.
template <typename T>
Var aggregate(Tape<T>& tape, Var maps, Var v, Var w_out, Var b_out, std::size_t heads);

struct RefinerTrace {
  Var out;  // [d_in x n]
  Var raw, expanded, convolved, reduced;  // invalid when skipped
  Var shared;  // the maps that were aggregated; what later blocks may reuse
  bool reused = false;
};

/// Full layer. When `reuse` is valid the layer skips map computation and
/// aggregates its own V with the supplied maps.
template <typename T>
RefinerTrace refiner_forward(Tape<T>& tape, Var x, const RefinerWeights<Var>& w, const RefinerConfig& cfg,
                             Var reuse = Var{});

// ---------------------------------------------------------------------------
// Tensor-level API over captured maps.

template <typename T>
struct AttentionBundle {
  Stage stage = Stage::Raw;
  Tensor<T> maps;  // [heads x n x n]
  std::size_t heads() const { return maps.dim(0); }
  std::size_t tokens() const { return maps.dim(1); }
};

template <typename T>
struct RawAttention {
  AttentionBundle<T> bundle;
  Tensor<T> v;
};

template <typename T>
RawAttention<T> compute_attention_maps(const Tensor<T>& x, const RefinerWeights<Tensor<T>>& w,
                                       const RefinerConfig& cfg);

template <typename T>
AttentionBundle<T> expand_maps(const AttentionBundle<T>& raw, const Tensor<T>& w_expand);

template <typename T>
AttentionBundle<T> dla_apply(const AttentionBundle<T>& expanded, const Tensor<T>& kernels, ConvMode mode,
                             std::size_t prefix_tokens = 0);

template <typename T>
AttentionBundle<T> reduce_maps(const AttentionBundle<T>& convolved, const Tensor<T>& w_reduce);

template <typename T>
Tensor<T> aggregate(const AttentionBundle<T>& maps, const Tensor<T>& v, const Tensor<T>& w_out,
                    const Tensor<T>& b_out, std::size_t heads);

template <typename T>
struct RefinerOutput {
  Tensor<T> y;
  AttentionBundle<T> shared;
  std::vector<AttentionBundle<T>> stages;  // every stage computed, in order
};

template <typename T>
RefinerOutput<T> refiner_forward(const Tensor<T>& x, const RefinerWeights<Tensor<T>>& w, const RefinerConfig& cfg,
                                 const AttentionBundle<T>* reuse = nullptr);

/// Pre-softmax expansion identity: sum_i w_i Q_i^T K_i against the single
/// product of the reweighted stacked queries with K. Returns max |difference|.
double check_expansion_equivalence(const Tensor<double>& x, const Tensor<double>& w_q, const Tensor<double>& w_k,
                                   const Tensor<double>& w_expand, std::size_t head, std::size_t heads);

/// Convolving one attention row then aggregating values equals aggregating
/// locally kernel-weighted values with the original row. Returns max |difference|.
double check_dla_1d_equivalence(const Tensor<double>& a_row, const Tensor<double>& w, const Tensor<double>& v);

struct HeadDiversity {
  double mean_cosine = 0;   // over distinct head pairs (1 for a single head)
  double mean_entropy = 0;  // over rows with positive mass after clamping negatives
  std::size_t skipped_rows = 0;
};

template <typename T>
HeadDiversity head_diversity(const AttentionBundle<T>& bundle);

/// Writes `attn_b{block}_{stage}.rvt` into dir and returns the path.
template <typename T>
std::filesystem::path dump_bundle(const std::filesystem::path& dir, std::size_t block,
                                  const AttentionBundle<T>& bundle);

}  // namespace refiner
