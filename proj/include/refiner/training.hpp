#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "refiner/model.hpp"
#include "refiner/params.hpp"
#include "refiner/tensor.hpp"

namespace refiner {

struct TrainConfig {
  std::size_t steps = 2000;  // total optimizer steps; 0 means use epochs
  std::size_t epochs = 0;
  std::size_t batch_size = 32;
  double base_lr = 5e-3;  // peak lr = base_lr * batch_size / 256
  double weight_decay = 0.05;
  std::size_t warmup_epochs = 5;
  std::uint64_t seed = 0;
  double label_smoothing = 0.0;
  double target_acc = 0.99;  // threshold for steps_to_target
  std::size_t threads = 0;   // 0 = hardware concurrency, capped by REFINER_THREADS

  double peak_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
  void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Linear warmup from 0, then cosine decay to 0, in optimizer steps.
struct Schedule {
  std::size_t steps_per_epoch = 1;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;
  double peak_lr = 0;
};
Schedule make_schedule(const TrainConfig& cfg, std::size_t dataset_size);
double lr_at(std::size_t step, const Schedule& s);

/// Loss and its gradient with respect to the logits.
template <typename T>
struct LossGrad {
  T loss;
  Tensor<T> grad;
};
template <typename T>
LossGrad<T> cross_entropy(const Tensor<T>& logits, std::size_t label, T smoothing = T(0));

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <typename T>
struct AdamWState {
  std::vector<Tensor<T>> m, v;
  std::uint64_t step = 0;
};

/// Biases, LayerNorm parameters, positional embedding and class token are
/// exempt from weight decay; everything else decays.
bool decays(const std::string& name);
template <typename T>
std::vector<bool> decay_mask(const Parameters<T>& params);

/// Decoupled weight decay: p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adamw_step(Parameters<T>& params, const std::vector<Tensor<T>>& grads, AdamWState<T>& state,
                const AdamWConfig& hyper, const std::vector<bool>& decay);

struct LabeledImages {
  std::vector<Tensor<float>> images;  // each [C x S x S], values in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::size_t size() const { return images.size(); }
};

/// Procedural geometric patterns; label = i mod classes, so classes are
/// balanced. Each sample is drawn from its own seed-derived stream.
struct SyntheticShapes {
  std::size_t classes = 10;
  std::size_t count = 256;
  std::size_t img_size = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 0;

  LabeledImages generate() const;
  static const std::vector<std::string>& pattern_names();
};

struct EpochRecord {
  std::size_t step = 0;  // last step of the epoch
  std::size_t epoch = 0;
  double lr = 0;         // lr_at(step)
  double train_loss = 0; // mean over the epoch's samples
  double train_acc = 0;  // running accuracy over the epoch
};

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

template <typename T>
struct TrainResult {
  Parameters<T> params;
  std::vector<EpochRecord> history;
  std::vector<double> step_loss;  // batch mean loss per step
  double final_train_acc = 0;     // clean evaluation after the last step
  std::optional<std::size_t> steps_to_target;  // steps until an epoch's running acc reached target
  std::size_t parameter_count = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // history.csv and checkpoint/ when non-empty
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Errors: ConfigError for bad configs; NumericError naming the step index when
/// the loss becomes non-finite.
template <typename T>
TrainResult<T> train(const ModelConfig& model, const TrainConfig& cfg, const LabeledImages& data,
                     const TrainOptions& opts = {});

struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::size_t> predictions;
};

template <typename T>
EvalResult evaluate(const Parameters<T>& params, const ModelConfig& cfg, const LabeledImages& data,
                    std::size_t threads = 0);

template <typename T>
std::size_t argmax(const Tensor<T>& v);

/// Desk-scale model: 32x32 input, patch 8, 2 blocks, dim 32, 4 heads,
/// expansion 2, 3x3 kernels, 10 classes, no map sharing.
ModelConfig tiny_model_config();
/// Same model with expansion 1 and no convolution.
ModelConfig degenerate_twin(ModelConfig cfg);

}  // namespace refiner
