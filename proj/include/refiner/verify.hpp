#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refiner/gradcheck.hpp"
#include "refiner/model.hpp"

namespace refiner {

/// One-block models spanning modes, reduction, ratios, kernels and sizes;
/// small enough for a full central-difference sweep.
std::vector<ModelConfig> block_check_configs();

/// Random parameters (every tensor, stddev 0.3) so identity-initialized
/// structure cannot mask a wrong gradient.
Parameters<double> random_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Block 0 output w.r.t. the block input and every block parameter.
GradCheckReport check_block_gradients(const ModelConfig& cfg, std::uint64_t seed);

/// Logits w.r.t. every model parameter for one random image.
GradCheckReport check_model_gradients(const ModelConfig& cfg, std::uint64_t seed);

/// Short label such as "d=8 H=2 n=5 r=2 k=3 direct reduce".
std::string describe(const ModelConfig& cfg);

}  // namespace refiner
