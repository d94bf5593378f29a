#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "refiner/attention.hpp"
#include "refiner/params.hpp"
#include "refiner/random.hpp"
#include "refiner/tape.hpp"

namespace refiner {

struct ModelConfig {
  std::size_t img_size = 224;
  std::size_t patch_size = 16;
  std::size_t in_channels = 3;
  std::size_t num_classes = 1000;
  std::size_t depth = 12;
  std::size_t dim = 768;
  std::size_t heads = 12;
  std::size_t mlp_ratio = 4;
  bool use_class_token = true;
  // Ratio, kernel, mode, reduction, sharing and bias flags. d_in, heads and
  // prefix_tokens are derived from the fields above; see block_refiner().
  RefinerConfig refiner;

  std::size_t grid() const { return img_size / patch_size; }
  std::size_t patches() const { return grid() * grid(); }
  std::size_t prefix_tokens() const { return use_class_token ? 1 : 0; }
  std::size_t seq_len() const { return patches() + prefix_tokens(); }
  std::size_t mlp_hidden() const { return dim * mlp_ratio; }
  std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }
  RefinerConfig block_refiner() const;

  void validate() const;  // throws ConfigError
};

/// Architecture presets: Base, S, M, L (refiner r = 3, k = 3, sharing 1).
ModelConfig preset(std::string_view name);
const std::vector<std::string>& preset_names();

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep the value from `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Which blocks compute fresh attention maps. Blocks run in groups of
/// 1 + share_next; the first of each group computes, the rest reuse.
struct ShareSchedule {
  std::size_t share_next = 0;     // after clamping
  std::vector<bool> computes;     // per block
  std::optional<std::string> warning;
};
ShareSchedule share_schedule(const ModelConfig& cfg);

template <typename T>
Parameters<T> init_model(const ModelConfig& cfg, Rng& rng, double kernel_noise = 0.02);

/// Closed-form parameter count.
std::size_t count_params(const ModelConfig& cfg);
/// Parameters contributed by expansion, convolution and reduction.
std::size_t refiner_overhead(const ModelConfig& cfg);

/// Multiply-accumulate counts. Every block is charged its full attention work;
/// `shared_savings` is what map reuse skips and is not subtracted from total().
struct FlopBreakdown {
  std::uint64_t patch_embed = 0;
  std::uint64_t qkv = 0;
  std::uint64_t attention = 0;  // logits and value aggregation
  std::uint64_t refiner = 0;    // expansion, convolution, reduction
  std::uint64_t projection = 0;
  std::uint64_t mlp = 0;
  std::uint64_t head = 0;
  std::uint64_t shared_savings = 0;
  std::uint64_t total() const { return patch_embed + qkv + attention + refiner + projection + mlp + head; }
  std::uint64_t total_with_sharing() const { return total() - shared_savings; }
};
FlopBreakdown count_flops(const ModelConfig& cfg, std::size_t resolution = 0);  // 0 = cfg.img_size

/// Resolves parameter names to tape handles, recording each tensor on first use.
template <typename T>
class Binder {
 public:
  Binder(Tape<T>& tape, const Parameters<T>& params, bool trainable) : tape_(&tape), params_(&params), trainable_(trainable) {}
  /// Uses handles that were already recorded, indexed like the store.
  Binder(Tape<T>& tape, const Parameters<T>& params, std::vector<Var> vars);

  Var operator()(const std::string& name);
  Tape<T>& tape() { return *tape_; }
  /// (store index, handle) for every parameter used so far, in first-use order.
  const std::vector<std::pair<std::size_t, Var>>& bound() const { return bound_; }

 private:
  Tape<T>* tape_;
  const Parameters<T>* params_;
  bool trainable_ = false;
  std::vector<Var> preset_;
  std::unordered_map<std::size_t, Var> cache_;
  std::vector<std::pair<std::size_t, Var>> bound_;
};

/// Non-overlapping patches of a [C x S x S] image as columns of a
/// [C*p*p x n] matrix; patch order is row-major over the grid and each column
/// is channel-major then row-major inside the patch.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, std::size_t patch_size);

/// Patch projection, class token, positional embedding: [dim x seq].
template <typename T>
Var patch_embed(Binder<T>& bind, const ModelConfig& cfg, const Tensor<T>& image);

struct BlockTrace {
  Var out;
  RefinerTrace attn;
};

/// Pre-norm block: X' = X + Attn(LN(X)); X'' = X' + MLP(LN(X')).
template <typename T>
BlockTrace block_forward(Binder<T>& bind, const ModelConfig& cfg, std::size_t block, Var x, Var reuse = Var{});

/// Final norm, class-token (or mean-pooled) readout, linear head: [num_classes].
template <typename T>
Var head_forward(Binder<T>& bind, const ModelConfig& cfg, Var x);

struct ModelTrace {
  Var logits;
  Var embeddings;             // input to the first block
  std::vector<BlockTrace> blocks;
};

/// Whole model on one tape (training and gradient checks).
template <typename T>
ModelTrace model_forward(Binder<T>& bind, const ModelConfig& cfg, const Tensor<T>& image);

struct ForwardOptions {
  bool keep_features = false;  // embeddings and block outputs
  bool keep_maps = false;      // every attention stage of every block
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  Tensor<T> embeddings;
  std::vector<Tensor<T>> block_outputs;
  std::vector<std::vector<AttentionBundle<T>>> maps;  // per block, stages in order
};

/// Inference without gradients. Each block runs on its own short-lived tape,
/// so memory stays bounded for the large presets.
template <typename T>
ForwardResult<T> model_forward(const Tensor<T>& image, const Parameters<T>& params, const ModelConfig& cfg,
                               const ForwardOptions& opts = {});

/// Bilinear resampling of the positional grid of pos [dim x (prefix + old_n)];
/// the prefix (class-token) columns are copied unchanged.
template <typename T>
Tensor<T> interpolate_pos_embed(const Tensor<T>& pos, std::size_t old_n, std::size_t new_n, std::size_t prefix = 1);

/// Checkpoint directory: one RVT1 file per tensor, manifest.json, config.json.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const Parameters<T>& params);

template <typename T>
struct Checkpoint {
  ModelConfig config;
  Parameters<T> params;
};

/// Loads and verifies that names and shapes match a fresh model of the
/// stored config.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir);

}  // namespace refiner
