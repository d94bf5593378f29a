#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "refiner/model.hpp"
#include "refiner/tensor.hpp"
#include "refiner/training.hpp"

namespace refiner {

/// Linear CKA between [N x p] and [N x q] feature matrices (one example per
/// row). Columns are centered internally. Returns 0 when either centered
/// matrix is numerically zero. Throws DimensionError for N < 2 or mismatched N.
double linear_cka(const Tensor<double>& x, const Tensor<double>& y);

struct EvolutionReport {
  std::vector<double> scores;  // F_k per block: CKA(f_k, f_out) / CKA(f_in, f_out)
  double cka_in_out = 0;       // mean over runs
  std::size_t batch = 0;
  std::size_t runs = 0;
};

/// Each run draws `batch` distinct images with its own seed-derived stream.
/// Features are every token at a block output, class token included.
template <typename T>
EvolutionReport feature_evolution(const ModelConfig& cfg, const Parameters<T>& params, const LabeledImages& images,
                                  std::size_t batch = 32, std::size_t runs = 10, std::uint64_t seed = 0);

void write_evolution_csv(const std::filesystem::path& path, const EvolutionReport& report);

/// Throws FormatError naming the first tensor whose name or shape differs
/// from a fresh model of cfg.
template <typename T>
void verify_params(const ModelConfig& cfg, const Parameters<T>& params);

struct DiversityRow {
  std::size_t block = 0;
  Stage stage = Stage::Raw;
  HeadDiversity stats;
};

/// Head statistics for every stored stage of every block, averaged over
/// images; when dump_dir is set the first image's bundles are written there.
template <typename T>
std::vector<DiversityRow> diversity_report(const ModelConfig& cfg, const Parameters<T>& params,
                                           const LabeledImages& images,
                                           const std::filesystem::path& dump_dir = {});

void write_diversity_csv(const std::filesystem::path& path, const std::vector<DiversityRow>& rows);

const std::vector<std::string>& ablation_axes();

/// Copy of cfg with `axis` set to `value`. Throws ConfigError for unknown
/// axes and values the resulting model rejects.
ModelConfig apply_axis(ModelConfig cfg, const std::string& axis, const std::string& value);

struct AblationRow {
  std::string value;
  std::size_t params = 0;
  double final_acc = 0;
  double final_loss = 0;  // last epoch mean
  std::optional<std::size_t> steps_to_target;
};

struct AblationResult {
  std::string axis;
  std::vector<AblationRow> rows;      // in the order the values were given
  std::vector<std::string> warnings;  // e.g. clamped sharing
};

/// Trains every cell with the same seed and data.
AblationResult ablation_grid(const std::string& axis, const std::vector<std::string>& values, const ModelConfig& base,
                             const TrainConfig& train_cfg, const LabeledImages& data);

/// Writes `ablation_<axis>.csv` into dir and returns its path.
std::filesystem::path write_ablation_csv(const std::filesystem::path& dir, const AblationResult& result);

}  // namespace refiner
