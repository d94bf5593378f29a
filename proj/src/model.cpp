#include "refiner/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "refiner/kernels.hpp"
#include "refiner/ops.hpp"
#include "refiner/rvt.hpp"

namespace refiner {

RefinerConfig ModelConfig::block_refiner() const {
  RefinerConfig r = refiner;
  r.d_in = dim;
  r.heads = heads;
  r.prefix_tokens = prefix_tokens();
  return r;
}

void ModelConfig::validate() const {
  if (patch_size == 0 || img_size == 0 || img_size % patch_size != 0) {
    throw ConfigError("img_size " + std::to_string(img_size) + " is not a multiple of patch_size " +
                      std::to_string(patch_size));
  }
  if (depth == 0 || dim == 0 || num_classes == 0 || mlp_ratio == 0 || in_channels == 0) {
    throw ConfigError("depth, dim, num_classes, mlp_ratio and in_channels must be positive");
  }
  block_refiner().validate();
}

namespace {

ModelConfig make_preset(std::size_t depth, std::size_t dim, std::size_t heads, std::size_t mlp_ratio) {
  ModelConfig c;
  c.depth = depth;
  c.dim = dim;
  c.heads = heads;
  c.mlp_ratio = mlp_ratio;
  c.refiner.ratio = 3;
  c.refiner.kernel = 3;
  c.refiner.conv_mode = ConvMode::Direct;
  c.refiner.use_reduction = true;
  c.refiner.share_next = 1;
  c.refiner.qkv_bias = true;
  return c;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"Base", "S", "M", "L"};
  return names;
}

ModelConfig preset(std::string_view name) {
  const std::string n = lower(name);
  if (n == "base") return make_preset(12, 768, 12, 4);
  if (n == "s") return make_preset(16, 384, 12, 3);
  if (n == "m") return make_preset(32, 420, 12, 3);
  if (n == "l") return make_preset(32, 512, 16, 3);
  throw ConfigError("unknown preset '" + std::string(name) + "' (Base, S, M, L)");
}

nlohmann::json to_json(const ModelConfig& c) {
  const RefinerConfig& r = c.refiner;
  return {{"img_size", c.img_size},
          {"patch_size", c.patch_size},
          {"in_channels", c.in_channels},
          {"num_classes", c.num_classes},
          {"depth", c.depth},
          {"dim", c.dim},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"use_class_token", int(c.use_class_token)},
          {"proj_dim", r.d},
          {"expansion_ratio", r.ratio},
          {"kernel_size", r.kernel},
          {"conv_mode", conv_mode_name(r.conv_mode)},
          {"use_reduction", int(r.use_reduction)},
          {"share_next", r.share_next},
          {"qkv_bias", int(r.qkv_bias)},
          {"refine", int(r.refine)}};
}

namespace {

std::size_t get_size(const nlohmann::json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

bool get_flag(const nlohmann::json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) return v.get<long long>() != 0;
  throw ConfigError(std::string("config key '") + key + "' must be 0/1 or a boolean");
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  c.img_size = get_size(j, "img_size", c.img_size);
  c.patch_size = get_size(j, "patch_size", c.patch_size);
  c.in_channels = get_size(j, "in_channels", c.in_channels);
  c.num_classes = get_size(j, "num_classes", c.num_classes);
  c.depth = get_size(j, "depth", c.depth);
  c.dim = get_size(j, "dim", c.dim);
  c.heads = get_size(j, "heads", c.heads);
  c.mlp_ratio = get_size(j, "mlp_ratio", c.mlp_ratio);
  c.use_class_token = get_flag(j, "use_class_token", c.use_class_token);
  RefinerConfig& r = c.refiner;
  r.d = get_size(j, "proj_dim", r.d);
  r.ratio = get_size(j, "expansion_ratio", r.ratio);
  r.kernel = get_size(j, "kernel_size", r.kernel);
  if (j.contains("conv_mode")) {
    if (!j.at("conv_mode").is_string()) throw ConfigError("config key 'conv_mode' must be a string");
    r.conv_mode = parse_conv_mode(j.at("conv_mode").get<std::string>());
  }
  r.use_reduction = get_flag(j, "use_reduction", r.use_reduction);
  r.share_next = get_size(j, "share_next", r.share_next);
  r.qkv_bias = get_flag(j, "qkv_bias", r.qkv_bias);
  r.refine = get_flag(j, "refine", r.refine);
  return c;
}

ShareSchedule share_schedule(const ModelConfig& cfg) {
  ShareSchedule s;
  s.share_next = cfg.refiner.share_next;
  if (cfg.depth > 0 && s.share_next >= cfg.depth) {
    s.share_next = cfg.depth - 1;
    s.warning = "share_next=" + std::to_string(cfg.refiner.share_next) + " exceeds depth " +
                std::to_string(cfg.depth) + "; clamped to " + std::to_string(s.share_next);
  }
  s.computes.resize(cfg.depth);
  for (std::size_t b = 0; b < cfg.depth; ++b) s.computes[b] = b % (s.share_next + 1) == 0;
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::string block_prefix(std::size_t b) { return "blocks." + std::to_string(b) + "."; }

template <typename T>
Tensor<T> trunc_normal(Rng& rng, Shape shape, double stddev = 0.02) {
  Tensor<T> t(std::move(shape));
  for (auto& e : t.data()) e = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

}  // namespace

template <typename T>
Parameters<T> init_model(const ModelConfig& cfg, Rng& rng, double kernel_noise) {
  cfg.validate();
  Parameters<T> p;
  const std::size_t dim = cfg.dim, hidden = cfg.mlp_hidden();
  p.add("patch_embed.weight", trunc_normal<T>(rng, {dim, cfg.patch_dim()}));
  p.add("patch_embed.bias", Tensor<T>(Shape{dim}));
  if (cfg.use_class_token) p.add("cls_token", trunc_normal<T>(rng, {dim}));
  p.add("pos_embed", trunc_normal<T>(rng, {dim, cfg.seq_len()}));
  const RefinerConfig rcfg = cfg.block_refiner();
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string pre = block_prefix(b);
    p.add(pre + "norm1.gamma", Tensor<T>(Shape{dim}, T{1}));
    p.add(pre + "norm1.beta", Tensor<T>(Shape{dim}));
    add_refiner_weights(p, pre + "attn.", rcfg, init_refiner_weights<T>(rcfg, rng, kernel_noise));
    p.add(pre + "norm2.gamma", Tensor<T>(Shape{dim}, T{1}));
    p.add(pre + "norm2.beta", Tensor<T>(Shape{dim}));
    p.add(pre + "mlp.w1", trunc_normal<T>(rng, {hidden, dim}));
    p.add(pre + "mlp.b1", Tensor<T>(Shape{hidden}));
    p.add(pre + "mlp.w2", trunc_normal<T>(rng, {dim, hidden}));
    p.add(pre + "mlp.b2", Tensor<T>(Shape{dim}));
  }
  p.add("norm.gamma", Tensor<T>(Shape{dim}, T{1}));
  p.add("norm.beta", Tensor<T>(Shape{dim}));
  p.add("head.weight", trunc_normal<T>(rng, {cfg.num_classes, dim}));
  p.add("head.bias", Tensor<T>(Shape{cfg.num_classes}));
  return p;
}

std::size_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t dim = cfg.dim, hidden = cfg.mlp_hidden();
  std::size_t n = dim * cfg.patch_dim() + dim;
  if (cfg.use_class_token) n += dim;
  n += dim * cfg.seq_len();
  const std::size_t per_block = 4 * dim + refiner_param_count(cfg.block_refiner()) + 2 * hidden * dim + hidden + dim;
  n += cfg.depth * per_block;
  n += 2 * dim + cfg.num_classes * dim + cfg.num_classes;
  return n;
}

std::size_t refiner_overhead(const ModelConfig& cfg) { return cfg.depth * refiner_overhead_params(cfg.block_refiner()); }

FlopBreakdown count_flops(const ModelConfig& cfg, std::size_t resolution) {
  cfg.validate();
  ModelConfig at = cfg;
  if (resolution != 0) at.img_size = resolution;
  at.validate();
  using u64 = std::uint64_t;
  const RefinerConfig r = at.block_refiner();
  const u64 N = at.seq_len(), N2 = N * N, dim = at.dim, d = r.proj_dim(), dh = r.head_dim();
  const u64 H = r.heads, Hx = r.expanded_heads(), k = r.kernel;

  u64 mixing = 0;
  if (r.refine) {
    mixing += Hx * H * N2;
    if (r.has_kernels()) {
      switch (r.conv_mode) {
        case ConvMode::Direct: mixing += Hx * k * k * N2; break;
        case ConvMode::SpatialReshape: mixing += Hx * k * k * N * (N - at.prefix_tokens()); break;
        case ConvMode::RowCol: mixing += Hx * 2 * k * N2; break;
      }
    }
    if (r.has_reduction()) mixing += H * Hx * N2;
  }

  FlopBreakdown f;
  f.patch_embed = u64(at.patches()) * dim * at.patch_dim();
  const ShareSchedule sched = share_schedule(at);
  for (std::size_t b = 0; b < at.depth; ++b) {
    f.qkv += 3 * d * dim * N;
    f.attention += d * N2 + u64(r.aggregated_heads()) * dh * N2;
    f.refiner += mixing;
    f.projection += dim * r.aggregated_dim() * N;
    f.mlp += 2 * u64(at.mlp_hidden()) * dim * N;
    if (!sched.computes[b]) f.shared_savings += 2 * d * dim * N + d * N2 + mixing;
  }
  f.head = u64(at.num_classes) * dim;
  return f;
}

// ---------------------------------------------------------------------------

template <typename T>
Binder<T>::Binder(Tape<T>& tape, const Parameters<T>& params, std::vector<Var> vars)
    : tape_(&tape), params_(&params), preset_(std::move(vars)) {
  if (preset_.size() != params.size()) throw DimensionError("binder: handle count does not match parameter count");
}

template <typename T>
Var Binder<T>::operator()(const std::string& name) {
  const std::size_t i = params_->index(name);
  if (const auto it = cache_.find(i); it != cache_.end()) return it->second;
  Var v;
  if (!preset_.empty()) {
    v = preset_[i];
  } else {
    v = trainable_ ? tape_->variable(params_->at(i)) : tape_->constant(params_->at(i));
  }
  cache_.emplace(i, v);
  bound_.emplace_back(i, v);
  return v;
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, std::size_t p) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2) || p == 0 || image.dim(1) % p != 0) {
    throw DimensionError("extract_patches: image " + shape_str(image.shape()) + " cannot be tiled by " +
                         std::to_string(p) + "-pixel patches");
  }
  const std::size_t C = image.dim(0), S = image.dim(1), g = S / p;
  Tensor<T> out(Shape{C * p * p, g * g});
  const std::size_t n = g * g;
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      const std::size_t col = gy * g + gx;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px) {
            out[((c * p + py) * p + px) * n + col] = image.at(c, gy * p + py, gx * p + px);
          }
    }
  return out;
}

template <typename T>
Var patch_embed(Binder<T>& bind, const ModelConfig& cfg, const Tensor<T>& image) {
  if (image.shape() != Shape{cfg.in_channels, cfg.img_size, cfg.img_size}) {
    throw DimensionError("patch_embed: expected image [" + std::to_string(cfg.in_channels) + "x" +
                         std::to_string(cfg.img_size) + "x" + std::to_string(cfg.img_size) + "], got " +
                         shape_str(image.shape()));
  }
  Tape<T>& tape = bind.tape();
  const Var patches = tape.constant(extract_patches(image, cfg.patch_size));
  Var x = add_bias(tape, matmul(tape, bind("patch_embed.weight"), patches), bind("patch_embed.bias"));
  if (cfg.use_class_token) x = concat_cols(tape, {reshape(tape, bind("cls_token"), {cfg.dim, 1}), x});
  return add(tape, x, bind("pos_embed"));
}

namespace {

// LayerNorm over the feature axis of a [dim x n] matrix.
template <typename T>
Var norm_features(Binder<T>& bind, Var x, const std::string& prefix) {
  Tape<T>& t = bind.tape();
  return transpose(t, layer_norm(t, transpose(t, x), bind(prefix + "gamma"), bind(prefix + "beta")));
}

bool used_when_reusing(std::string_view name) {
  return name == "w_v" || name == "b_v" || name == "w_out" || name == "b_out";
}

}  // namespace

template <typename T>
BlockTrace block_forward(Binder<T>& bind, const ModelConfig& cfg, std::size_t block, Var x, Var reuse) {
  Tape<T>& tape = bind.tape();
  const std::string pre = block_prefix(block);
  const RefinerConfig rcfg = cfg.block_refiner();
  RefinerWeights<Var> w;
  for_each_weight(rcfg, w, [&](const char* name, Var& v) {
    if (!reuse.valid() || used_when_reusing(name)) v = bind(pre + "attn." + name);
  });
  BlockTrace out;
  out.attn = refiner_forward(tape, norm_features(bind, x, pre + "norm1."), w, rcfg, reuse);
  const Var x1 = add(tape, x, out.attn.out);
  const Var h = norm_features(bind, x1, pre + "norm2.");
  const Var hidden = gelu(tape, add_bias(tape, matmul(tape, bind(pre + "mlp.w1"), h), bind(pre + "mlp.b1")));
  const Var mlp = add_bias(tape, matmul(tape, bind(pre + "mlp.w2"), hidden), bind(pre + "mlp.b2"));
  out.out = add(tape, x1, mlp);
  return out;
}

template <typename T>
Var head_forward(Binder<T>& bind, const ModelConfig& cfg, Var x) {
  Tape<T>& tape = bind.tape();
  const Var normed = norm_features(bind, x, "norm.");
  Var feature;
  if (cfg.use_class_token) {
    feature = slice_cols(tape, normed, 0, 1);
  } else {
    const std::size_t n = tape.value(normed).dim(1);
    feature = matmul(tape, normed, tape.constant(Tensor<T>(Shape{n, 1}, T(1) / static_cast<T>(n))));
  }
  const Var logits = add_bias(tape, matmul(tape, bind("head.weight"), feature), bind("head.bias"));
  return reshape(tape, logits, {cfg.num_classes});
}

template <typename T>
ModelTrace model_forward(Binder<T>& bind, const ModelConfig& cfg, const Tensor<T>& image) {
  cfg.validate();
  const ShareSchedule sched = share_schedule(cfg);
  ModelTrace trace;
  trace.embeddings = patch_embed(bind, cfg, image);
  Var x = trace.embeddings, shared;
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    BlockTrace bt = block_forward(bind, cfg, b, x, sched.computes[b] ? Var{} : shared);
    if (sched.computes[b]) shared = bt.attn.shared;
    x = bt.out;
    trace.blocks.push_back(bt);
  }
  trace.logits = head_forward(bind, cfg, x);
  return trace;
}

template <typename T>
ForwardResult<T> model_forward(const Tensor<T>& image, const Parameters<T>& params, const ModelConfig& cfg,
                               const ForwardOptions& opts) {
  cfg.validate();
  const ShareSchedule sched = share_schedule(cfg);
  ForwardResult<T> r;
  Tensor<T> x;
  {
    Tape<T> tape;
    Binder<T> bind(tape, params, false);
    x = tape.value(patch_embed(bind, cfg, image));
  }
  if (opts.keep_features) r.embeddings = x;
  Tensor<T> shared;
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    Tape<T> tape;
    Binder<T> bind(tape, params, false);
    const Var reuse = sched.computes[b] ? Var{} : tape.constant(shared);
    const BlockTrace bt = block_forward(bind, cfg, b, tape.constant(x), reuse);
    if (sched.computes[b]) shared = tape.value(bt.attn.shared);
    x = tape.value(bt.out);
    if (opts.keep_features) r.block_outputs.push_back(x);
    if (opts.keep_maps) {
      std::vector<AttentionBundle<T>> stages;
      const std::pair<Var, Stage> all[] = {{bt.attn.raw, Stage::Raw},
                                           {bt.attn.expanded, Stage::Expanded},
                                           {bt.attn.convolved, Stage::Convolved},
                                           {bt.attn.reduced, Stage::Reduced}};
      for (const auto& [v, stage] : all)
        if (v.valid()) stages.push_back({stage, tape.value(v)});
      r.maps.push_back(std::move(stages));
    }
  }
  Tape<T> tape;
  Binder<T> bind(tape, params, false);
  r.logits = tape.value(head_forward(bind, cfg, tape.constant(x)));
  return r;
}

namespace {

std::size_t square_side(std::size_t n, const char* what) {
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) throw ConfigError(std::string(what) + " token count " + std::to_string(n) + " is not a perfect square");
  return g;
}

}  // namespace

template <typename T>
Tensor<T> interpolate_pos_embed(const Tensor<T>& pos, std::size_t old_n, std::size_t new_n, std::size_t prefix) {
  const std::size_t og = square_side(old_n, "old"), ng = square_side(new_n, "new");
  if (pos.rank() != 2 || pos.dim(1) != prefix + old_n) {
    throw DimensionError("interpolate_pos_embed: expected [dim x " + std::to_string(prefix + old_n) + "], got " +
                         shape_str(pos.shape()));
  }
  const std::size_t dim = pos.dim(0), in_w = prefix + old_n, out_w = prefix + new_n;
  Tensor<T> out(Shape{dim, out_w});
  for (std::size_t f = 0; f < dim; ++f) {
    const auto src = pos.data().subspan(f * in_w, in_w);
    auto dst = out.data().subspan(f * out_w, out_w);
    std::copy_n(src.begin(), prefix, dst.begin());
    kernels::bilinear_plane<T>(src.subspan(prefix), og, og, dst.subspan(prefix), ng, ng);
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const Parameters<T>& params) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string file = params.name(i) + ".rvt";
    write_rvt(dir / file, params.at(i));
    manifest[params.name(i)] = {{"shape", params.at(i).shape()},
                                {"dtype", dtype_of<T>() == DType::f32 ? "f32" : "f64"},
                                {"file", file}};
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << "\n";
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const auto read_json = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw FormatError("checkpoint: cannot open " + (dir / name).string());
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("checkpoint: " + std::string(name) + ": " + e.what());
    }
  };
  Checkpoint<T> ck;
  ck.config = model_config_from_json(read_json("config.json"));
  const nlohmann::json manifest = read_json("manifest.json");
  Rng rng(0);
  const Parameters<T> expected = init_model<T>(ck.config, rng);
  if (manifest.size() != expected.size()) {
    throw FormatError("checkpoint/config mismatch: manifest lists " + std::to_string(manifest.size()) +
                      " tensors, config implies " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string& name = expected.name(i);
    if (!manifest.contains(name)) throw FormatError("checkpoint/config mismatch: missing tensor " + name);
    Tensor<T> t = read_rvt<T>(dir / manifest.at(name).at("file").get<std::string>());
    if (t.shape() != expected.at(i).shape()) {
      throw FormatError("checkpoint/config mismatch: " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(expected.at(i).shape()));
    }
    ck.params.add(name, std::move(t));
  }
  return ck;
}

#define REFINER_INSTANTIATE_MODEL(T)                                                                            \
  template Parameters<T> init_model<T>(const ModelConfig&, Rng&, double);                                       \
  template class Binder<T>;                                                                                     \
  template Tensor<T> extract_patches<T>(const Tensor<T>&, std::size_t);                                         \
  template Var patch_embed<T>(Binder<T>&, const ModelConfig&, const Tensor<T>&);                               \
  template BlockTrace block_forward<T>(Binder<T>&, const ModelConfig&, std::size_t, Var, Var);                  \
  template Var head_forward<T>(Binder<T>&, const ModelConfig&, Var);                                            \
  template ModelTrace model_forward<T>(Binder<T>&, const ModelConfig&, const Tensor<T>&);                      \
  template ForwardResult<T> model_forward<T>(const Tensor<T>&, const Parameters<T>&, const ModelConfig&,       \
                                             const ForwardOptions&);                                            \
  template Tensor<T> interpolate_pos_embed<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);        \
  template void save_checkpoint<T>(const std::filesystem::path&, const ModelConfig&, const Parameters<T>&);    \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

REFINER_INSTANTIATE_MODEL(float)
REFINER_INSTANTIATE_MODEL(double)

}  // namespace refiner
