#include "refiner/verify.hpp"

#include "refiner/random.hpp"

namespace refiner {

namespace {

ModelConfig block_config(std::size_t img, std::size_t patch, std::size_t dim, std::size_t heads, std::size_t ratio,
                         std::size_t kernel, ConvMode mode, bool reduce, bool cls = true) {
  ModelConfig c;
  c.img_size = img;
  c.patch_size = patch;
  c.in_channels = 1;
  c.num_classes = 3;
  c.depth = 1;
  c.dim = dim;
  c.heads = heads;
  c.mlp_ratio = 2;
  c.use_class_token = cls;
  c.refiner.ratio = ratio;
  c.refiner.kernel = kernel;
  c.refiner.conv_mode = mode;
  c.refiner.use_reduction = reduce;
  return c;
}

}  // namespace

std::vector<ModelConfig> block_check_configs() {
  return {
      block_config(8, 4, 8, 2, 2, 3, ConvMode::Direct, true),
      block_config(8, 4, 8, 2, 2, 3, ConvMode::Direct, false),
      block_config(6, 2, 6, 3, 1, 3, ConvMode::SpatialReshape, true),
      block_config(8, 4, 8, 2, 3, 3, ConvMode::SpatialReshape, false),
      block_config(9, 3, 8, 4, 2, 5, ConvMode::RowCol, true),
      block_config(8, 4, 4, 1, 4, 3, ConvMode::RowCol, false, false),
      block_config(8, 4, 8, 2, 1, 1, ConvMode::Direct, true),
  };
}

Parameters<double> random_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Parameters<double> p = init_model<double>(cfg, rng);
  for (std::size_t i = 0; i < p.size(); ++i) p.at(i) = rng.normal_tensor<double>(p.at(i).shape(), 0.3);
  return p;
}

GradCheckReport check_block_gradients(const ModelConfig& cfg, std::uint64_t seed) {
  const Parameters<double> p = random_parameters(cfg, seed);
  Rng rng(seed + 1);
  std::vector<std::size_t> idx;
  std::vector<Tensor<double>> inputs{rng.normal_tensor<double>({cfg.dim, cfg.seq_len()})};
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.name(i).rfind("blocks.0.", 0) == 0) {
      idx.push_back(i);
      inputs.push_back(p.at(i));
    }
  const auto fn = [&](Tape<double>& tape, const std::vector<Var>& v) {
    std::vector<Var> all(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) all[i] = tape.constant(p.at(i));
    for (std::size_t j = 0; j < idx.size(); ++j) all[idx[j]] = v[j + 1];
    Binder<double> bind(tape, p, all);
    return block_forward(bind, cfg, 0, v[0]).out;
  };
  return grad_check(fn, inputs, 1e-5, seed);
}

GradCheckReport check_model_gradients(const ModelConfig& cfg, std::uint64_t seed) {
  const Parameters<double> p = random_parameters(cfg, seed);
  Rng rng(seed + 1);
  const Tensor<double> img = rng.uniform_tensor<double>({cfg.in_channels, cfg.img_size, cfg.img_size}, 0.0, 1.0);
  std::vector<Tensor<double>> inputs;
  for (std::size_t i = 0; i < p.size(); ++i) inputs.push_back(p.at(i));
  const auto fn = [&](Tape<double>& tape, const std::vector<Var>& v) {
    Binder<double> bind(tape, p, v);
    return model_forward(bind, cfg, img).logits;
  };
  return grad_check(fn, inputs, 1e-5, seed);
}

std::string describe(const ModelConfig& c) {
  const RefinerConfig& r = c.refiner;
  return "d=" + std::to_string(c.dim) + " H=" + std::to_string(c.heads) + " n=" + std::to_string(c.seq_len()) +
         " r=" + std::to_string(r.ratio) + " k=" + std::to_string(r.kernel) + " " + conv_mode_name(r.conv_mode) +
         (r.use_reduction ? " reduce" : " no-reduce");
}

}  // namespace refiner
