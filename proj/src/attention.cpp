#include "refiner/attention.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "refiner/ops.hpp"
#include "refiner/rvt.hpp"

namespace refiner {

const char* conv_mode_name(ConvMode mode) {
  switch (mode) {
    case ConvMode::Direct: return "direct";
    case ConvMode::SpatialReshape: return "spatial";
    case ConvMode::RowCol: return "rowcol";
  }
  return "?";
}

ConvMode parse_conv_mode(std::string_view name) {
  if (name == "direct") return ConvMode::Direct;
  if (name == "spatial" || name == "spatial_reshape") return ConvMode::SpatialReshape;
  if (name == "rowcol" || name == "row_col") return ConvMode::RowCol;
  throw ConfigError("unknown conv mode '" + std::string(name) + "' (direct, spatial, rowcol)");
}

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::Raw: return "raw";
    case Stage::Expanded: return "expanded";
    case Stage::Convolved: return "convolved";
    case Stage::Reduced: return "reduced";
  }
  return "?";
}

Shape RefinerConfig::kernel_shape() const {
  if (conv_mode == ConvMode::RowCol) return {expanded_heads(), 2, kernel};
  return {expanded_heads(), kernel, kernel};
}

void RefinerConfig::validate() const {
  if (d_in == 0) throw ConfigError("refiner: d_in must be positive");
  if (heads == 0) throw ConfigError("refiner: heads must be >= 1");
  if (proj_dim() % heads != 0) {
    throw ConfigError("refiner: projection dim " + std::to_string(proj_dim()) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (ratio == 0) throw ConfigError("refiner: expansion ratio must be >= 1");
  if (kernel == 0 || kernel % 2 == 0) {
    throw ConfigError("refiner: kernel size must be odd, got " + std::to_string(kernel));
  }
}

std::size_t refiner_param_count(const RefinerConfig& cfg) {
  const std::size_t d = cfg.proj_dim();
  std::size_t n = 3 * d * cfg.d_in + (cfg.qkv_bias ? 3 * d : 0);
  n += cfg.d_in * cfg.aggregated_dim() + cfg.d_in;
  if (cfg.refine) n += cfg.expanded_heads() * cfg.heads;
  if (cfg.has_kernels()) n += numel(cfg.kernel_shape());
  if (cfg.has_reduction()) n += cfg.heads * cfg.expanded_heads();
  return n;
}

std::size_t refiner_overhead_params(const RefinerConfig& cfg) {
  RefinerConfig plain = cfg;
  plain.refine = false;
  return refiner_param_count(cfg) - refiner_param_count(plain);
}

template <typename T>
RefinerWeights<Tensor<T>> init_refiner_weights(const RefinerConfig& cfg, Rng& rng, double kernel_noise) {
  cfg.validate();
  const std::size_t d = cfg.proj_dim(), H = cfg.heads, Hx = cfg.expanded_heads();
  const auto linear = [&](std::size_t rows, std::size_t cols) {
    Tensor<T> t(Shape{rows, cols});
    for (auto& e : t.data()) e = static_cast<T>(rng.truncated_normal(0.02));
    return t;
  };
  RefinerWeights<Tensor<T>> w;
  w.w_q = linear(d, cfg.d_in);
  w.w_k = linear(d, cfg.d_in);
  w.w_v = linear(d, cfg.d_in);
  if (cfg.qkv_bias) w.b_q = w.b_k = w.b_v = Tensor<T>(Shape{d});
  if (cfg.refine) {
    w.w_expand = Tensor<T>(Shape{Hx, H});
    for (std::size_t h = 0; h < Hx; ++h) w.w_expand.at(h, h % H) = T{1};
  }
  if (cfg.has_kernels()) {
    w.kernels = Tensor<T>(cfg.kernel_shape());
    const std::size_t k = cfg.kernel;
    const std::size_t per_head = w.kernels.size() / Hx;
    for (std::size_t h = 0; h < Hx; ++h) {
      T* kh = w.kernels.data().data() + h * per_head;
      if (cfg.conv_mode == ConvMode::RowCol) {
        kh[k / 2] = T{1};
        kh[k + k / 2] = T{1};
      } else {
        kh[(k / 2) * k + k / 2] = T{1};
      }
      if (kernel_noise > 0) {
        for (std::size_t i = 0; i < per_head; ++i) kh[i] += static_cast<T>(rng.normal(0.0, kernel_noise));
      }
    }
  }
  if (cfg.has_reduction()) {
    w.w_reduce = Tensor<T>(Shape{H, Hx});
    for (std::size_t h = 0; h < Hx; ++h) w.w_reduce.at(h % H, h) = static_cast<T>(1.0 / static_cast<double>(cfg.ratio));
  }
  w.w_out = linear(cfg.d_in, cfg.aggregated_dim());
  w.b_out = Tensor<T>(Shape{cfg.d_in});
  return w;
}

template <typename T>
void add_refiner_weights(Parameters<T>& store, const std::string& prefix, const RefinerConfig& cfg,
                         RefinerWeights<Tensor<T>> w) {
  for_each_weight(cfg, w, [&](const char* name, Tensor<T>& t) { store.add(prefix + name, std::move(t)); });
}

template <typename T>
RefinerWeights<Var> refiner_vars(const Parameters<T>& store, const std::vector<Var>& vars, const std::string& prefix,
                                 const RefinerConfig& cfg) {
  RefinerWeights<Var> w;
  for_each_weight(cfg, w, [&](const char* name, Var& v) { v = vars.at(store.index(prefix + name)); });
  return w;
}

template <typename T>
RefinerWeights<Var> bind_refiner(Tape<T>& tape, const RefinerConfig& cfg, const RefinerWeights<Tensor<T>>& w,
                                 bool trainable) {
  RefinerWeights<Var> out;
  auto src = w;
  std::vector<Var> vars;
  for_each_weight(cfg, src, [&](const char*, Tensor<T>& t) {
    vars.push_back(trainable ? tape.variable(t) : tape.constant(t));
  });
  std::size_t i = 0;
  for_each_weight(cfg, out, [&](const char*, Var& v) { v = vars[i++]; });
  return out;
}

namespace {

template <typename T>
Var project(Tape<T>& tape, Var weight, Var bias, Var x) {
  const Var y = matmul(tape, weight, x);
  return bias.valid() ? add_bias(tape, y, bias) : y;
}

// maps[h] as an n x n matrix.
template <typename T>
Var head_slice(Tape<T>& tape, Var maps, std::size_t h) {
  const Tensor<T>& m = tape.value(maps);
  const std::size_t n = m.dim(1), c = m.dim(2), stride = n * c;
  Tensor<T> out(Shape{n, c});
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(h * stride), stride, out.data().begin());
  return tape.record("head_slice", std::move(out), {maps}, [maps, h, stride](Tape<T>& t, const Tensor<T>&,
                                                                             const Tensor<T>& g) {
    auto dst = t.grad_buffer(maps).data().subspan(h * stride, stride);
    auto src = g.data();
    for (std::size_t i = 0; i < stride; ++i) dst[i] += src[i];
  });
}

// Stacks equally shaped n x m matrices into [count x n x m].
template <typename T>
Var stack_heads(Tape<T>& tape, const std::vector<Var>& parts) {
  const Shape& s = tape.value(parts.front()).shape();
  const std::size_t stride = numel(s);
  Tensor<T> out(Shape{parts.size(), s[0], s[1]});
  for (std::size_t h = 0; h < parts.size(); ++h) {
    const auto src = tape.value(parts[h]).data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(h * stride));
  }
  return tape.record("stack_heads", std::move(out), std::span<const Var>(parts),
                     [parts, s, stride](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       for (std::size_t h = 0; h < parts.size(); ++h) {
                         if (!t.requires_grad(parts[h])) continue;
                         Tensor<T> part(s);
                         std::copy_n(g.data().begin() + static_cast<std::ptrdiff_t>(h * stride), stride,
                                     part.data().begin());
                         t.accumulate(parts[h], part);
                       }
                     });
}

template <typename T>
void require_maps(const Tensor<T>& m, const char* what) {
  if (m.rank() != 3 || m.dim(1) != m.dim(2)) {
    throw DimensionError(std::string(what) + ": expected [heads x n x n] maps, got " + shape_str(m.shape()));
  }
}

}  // namespace

template <typename T>
RawMaps compute_attention_maps(Tape<T>& tape, Var x, const RefinerWeights<Var>& w, const RefinerConfig& cfg) {
  cfg.validate();
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 2 || xv.dim(0) != cfg.d_in) {
    throw DimensionError("attention input must be [" + std::to_string(cfg.d_in) + " x n], got " +
                         shape_str(xv.shape()));
  }
  const std::size_t dh = cfg.head_dim();
  const Var q = project(tape, w.w_q, w.b_q, x);
  const Var k = project(tape, w.w_k, w.b_k, x);
  const Var v = project(tape, w.w_v, w.b_v, x);
  const T temperature = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Var qh = slice_rows(tape, q, h * dh, (h + 1) * dh);
    const Var kh = slice_rows(tape, k, h * dh, (h + 1) * dh);
    heads.push_back(softmax_rows(tape, matmul(tape, transpose(tape, qh), kh), temperature));
  }
  return {stack_heads(tape, heads), v};
}

template <typename T>
Var mix_heads(Tape<T>& tape, Var maps, Var mix) {
  const Tensor<T>& m = tape.value(maps);
  require_maps(m, "mix_heads");
  const Tensor<T>& w = tape.value(mix);
  if (w.rank() != 2 || w.dim(1) != m.dim(0)) {
    throw DimensionError("head mixing matrix " + shape_str(w.shape()) + " does not match " +
                         std::to_string(m.dim(0)) + " input heads");
  }
  const std::size_t n = m.dim(1);
  const Var flat = reshape(tape, maps, {m.dim(0), n * n});
  return reshape(tape, matmul(tape, mix, flat), {w.dim(0), n, n});
}

template <typename T>
Var dla_apply(Tape<T>& tape, Var maps, Var kernels, ConvMode mode, std::size_t prefix_tokens) {
  require_maps(tape.value(maps), "dla_apply");
  switch (mode) {
    case ConvMode::Direct: return headwise_conv2d(tape, maps, kernels);
    case ConvMode::SpatialReshape: return headwise_spatial_conv(tape, maps, kernels, prefix_tokens);
    case ConvMode::RowCol: return headwise_rowcol_conv(tape, maps, kernels);
  }
  throw ConfigError("dla_apply: bad conv mode");
}

template <typename T>
Var aggregate(Tape<T>& tape, Var maps, Var v, Var w_out, Var b_out, std::size_t heads) {
  const Tensor<T>& m = tape.value(maps);
  require_maps(m, "aggregate");
  const Tensor<T>& vv = tape.value(v);
  if (heads == 0 || m.dim(0) % heads != 0) {
    throw DimensionError("aggregate: " + std::to_string(m.dim(0)) + " maps cannot be matched to " +
                         std::to_string(heads) + " value heads");
  }
  if (vv.rank() != 2 || vv.dim(1) != m.dim(1) || vv.dim(0) % heads != 0) {
    throw DimensionError("aggregate: values " + shape_str(vv.shape()) + " do not match maps " + shape_str(m.shape()));
  }
  const std::size_t dh = vv.dim(0) / heads;
  std::vector<Var> segments;
  for (std::size_t h = 0; h < heads; ++h) segments.push_back(slice_rows(tape, v, h * dh, (h + 1) * dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < m.dim(0); ++h) {
    const Var a = head_slice(tape, maps, h);
    outs.push_back(matmul(tape, segments[h % heads], transpose(tape, a)));
  }
  const Var concat = outs.size() == 1 ? outs.front() : concat_rows(tape, outs);
  return add_bias(tape, matmul(tape, w_out, concat), b_out);
}

template <typename T>
RefinerTrace refiner_forward(Tape<T>& tape, Var x, const RefinerWeights<Var>& w, const RefinerConfig& cfg, Var reuse) {
  cfg.validate();
  RefinerTrace trace;
  if (reuse.valid()) {
    const Tensor<T>& r = tape.value(reuse);
    const std::size_t n = tape.value(x).dim(1);
    if (r.rank() != 3 || r.dim(0) != cfg.aggregated_heads() || r.dim(1) != n || r.dim(2) != n) {
      throw DimensionError("reused attention maps " + shape_str(r.shape()) + " do not fit this layer (expected [" +
                           std::to_string(cfg.aggregated_heads()) + "x" + std::to_string(n) + "x" +
                           std::to_string(n) + "])");
    }
    const Var v = project(tape, w.w_v, w.b_v, x);
    trace.shared = reuse;
    trace.reused = true;
    trace.out = aggregate(tape, reuse, v, w.w_out, w.b_out, cfg.heads);
    return trace;
  }
  const RawMaps raw = compute_attention_maps(tape, x, w, cfg);
  trace.raw = raw.maps;
  Var current = raw.maps;
  if (cfg.refine) {
    trace.expanded = current = mix_heads(tape, current, w.w_expand);
    if (cfg.has_kernels()) {
      trace.convolved = current = dla_apply(tape, current, w.kernels, cfg.conv_mode, cfg.prefix_tokens);
    }
    if (cfg.has_reduction()) trace.reduced = current = mix_heads(tape, current, w.w_reduce);
  }
  trace.shared = current;
  trace.out = aggregate(tape, current, raw.v, w.w_out, w.b_out, cfg.heads);
  return trace;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void require_stage(const AttentionBundle<T>& b, Stage want, const char* op) {
  if (b.stage != want) {
    throw ConfigError(std::string(op) + " expects " + stage_name(want) + "-stage maps, got " + stage_name(b.stage));
  }
}

}  // namespace

template <typename T>
RawAttention<T> compute_attention_maps(const Tensor<T>& x, const RefinerWeights<Tensor<T>>& w,
                                       const RefinerConfig& cfg) {
  Tape<T> tape;
  const auto wv = bind_refiner(tape, cfg, w, false);
  const RawMaps r = compute_attention_maps(tape, tape.constant(x), wv, cfg);
  return {{Stage::Raw, tape.value(r.maps)}, tape.value(r.v)};
}

template <typename T>
AttentionBundle<T> expand_maps(const AttentionBundle<T>& raw, const Tensor<T>& w_expand) {
  require_stage(raw, Stage::Raw, "expand_maps");
  Tape<T> tape;
  return {Stage::Expanded, tape.value(mix_heads(tape, tape.constant(raw.maps), tape.constant(w_expand)))};
}

template <typename T>
AttentionBundle<T> dla_apply(const AttentionBundle<T>& expanded, const Tensor<T>& kernels, ConvMode mode,
                             std::size_t prefix_tokens) {
  require_stage(expanded, Stage::Expanded, "dla_apply");
  Tape<T> tape;
  return {Stage::Convolved,
          tape.value(dla_apply(tape, tape.constant(expanded.maps), tape.constant(kernels), mode, prefix_tokens))};
}

template <typename T>
AttentionBundle<T> reduce_maps(const AttentionBundle<T>& convolved, const Tensor<T>& w_reduce) {
  require_stage(convolved, Stage::Convolved, "reduce_maps");
  Tape<T> tape;
  return {Stage::Reduced, tape.value(mix_heads(tape, tape.constant(convolved.maps), tape.constant(w_reduce)))};
}

template <typename T>
Tensor<T> aggregate(const AttentionBundle<T>& maps, const Tensor<T>& v, const Tensor<T>& w_out,
                    const Tensor<T>& b_out, std::size_t heads) {
  Tape<T> tape;
  return tape.value(aggregate(tape, tape.constant(maps.maps), tape.constant(v), tape.constant(w_out),
                              tape.constant(b_out), heads));
}

template <typename T>
RefinerOutput<T> refiner_forward(const Tensor<T>& x, const RefinerWeights<Tensor<T>>& w, const RefinerConfig& cfg,
                                 const AttentionBundle<T>* reuse) {
  Tape<T> tape;
  const auto wv = bind_refiner(tape, cfg, w, false);
  const Var reuse_var = reuse ? tape.constant(reuse->maps) : Var{};
  const RefinerTrace tr = refiner_forward(tape, tape.constant(x), wv, cfg, reuse_var);
  RefinerOutput<T> out;
  out.y = tape.value(tr.out);
  const std::pair<Var, Stage> stages[] = {
      {tr.raw, Stage::Raw}, {tr.expanded, Stage::Expanded}, {tr.convolved, Stage::Convolved}, {tr.reduced, Stage::Reduced}};
  Stage last = reuse ? reuse->stage : Stage::Raw;
  for (const auto& [var, stage] : stages) {
    if (!var.valid()) continue;
    out.stages.push_back({stage, tape.value(var)});
    last = stage;
  }
  out.shared = {last, tape.value(tr.shared)};
  return out;
}

// ---------------------------------------------------------------------------

double check_expansion_equivalence(const Tensor<double>& x, const Tensor<double>& w_q, const Tensor<double>& w_k,
                                   const Tensor<double>& w_expand, std::size_t head, std::size_t heads) {
  const std::size_t d = w_q.dim(0), d_in = x.dim(0), n = x.dim(1);
  if (w_k.shape() != w_q.shape() || w_q.dim(1) != d_in || heads == 0 || d % heads != 0 ||
      w_expand.dim(1) != heads || head >= w_expand.dim(0)) {
    throw DimensionError("check_expansion_equivalence: inconsistent shapes");
  }
  const std::size_t dh = d / heads;
  Tensor<double> q(Shape{d, n}), k(Shape{d, n});
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      double sq = 0, sk = 0;
      for (std::size_t i = 0; i < d_in; ++i) {
        sq += w_q.at(r, i) * x.at(i, c);
        sk += w_k.at(r, i) * x.at(i, c);
      }
      q.at(r, c) = sq;
      k.at(r, c) = sk;
    }
  // Left: weighted sum of per-head logit matrices.
  Tensor<double> left(Shape{n, n});
  for (std::size_t h = 0; h < heads; ++h) {
    const double wh = w_expand.at(head, h);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q.at(c, i) * k.at(c, j);
        left.at(i, j) += wh * s;
      }
  }
  // Right: reweight query rows head by head, then one full-width product.
  Tensor<double> qw = q;
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < n; ++i) qw.at(c, i) *= w_expand.at(head, c / dh);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += qw.at(c, i) * k.at(c, j);
      worst = std::max(worst, std::abs(s - left.at(i, j)));
    }
  return worst;
}

double check_dla_1d_equivalence(const Tensor<double>& a_row, const Tensor<double>& w, const Tensor<double>& v) {
  const long n = static_cast<long>(a_row.size()), k = static_cast<long>(w.size()), half = k / 2;
  if (k % 2 == 0) throw ConfigError("check_dla_1d_equivalence: kernel size must be odd");
  if (v.rank() != 2 || static_cast<long>(v.dim(1)) != n) {
    throw DimensionError("check_dla_1d_equivalence: values must be [d x n]");
  }
  const std::size_t d = v.dim(0);
  const auto A = [&](long j) { return j < 0 || j >= n ? 0.0 : a_row[static_cast<std::size_t>(j)]; };
  const auto V = [&](std::size_t c, long j) { return j < 0 || j >= n ? 0.0 : v.at(c, static_cast<std::size_t>(j)); };
  double worst = 0;
  for (std::size_t c = 0; c < d; ++c) {
    // Convolve the attention row, then aggregate.
    double left = 0;
    for (long j = 0; j < n; ++j) {
      double conv = 0;
      for (long a = 0; a < k; ++a) conv += w[static_cast<std::size_t>(a)] * A(j - half + a);
      left += conv * V(c, j);
    }
    // Aggregate kernel-weighted neighbouring values with the original row.
    double right = 0;
    for (long j = 0; j < n; ++j) {
      double local = 0;
      for (long a = 0; a < k; ++a) local += w[static_cast<std::size_t>(a)] * V(c, j - a + half);
      right += A(j) * local;
    }
    worst = std::max(worst, std::abs(left - right));
  }
  return worst;
}

template <typename T>
HeadDiversity head_diversity(const AttentionBundle<T>& bundle) {
  const Tensor<T>& m = bundle.maps;
  require_maps(m, "head_diversity");
  const std::size_t H = m.dim(0), n = m.dim(1), stride = n * n;
  const auto head = [&](std::size_t h) { return m.data().subspan(h * stride, stride); };
  HeadDiversity out;
  if (H < 2) {
    out.mean_cosine = 1.0;
  } else {
    double total = 0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < H; ++a)
      for (std::size_t b = a + 1; b < H; ++b) {
        double dot = 0, na = 0, nb = 0;
        const auto x = head(a), y = head(b);
        for (std::size_t i = 0; i < stride; ++i) {
          dot += double(x[i]) * y[i];
          na += double(x[i]) * x[i];
          nb += double(y[i]) * y[i];
        }
        total += (na > 0 && nb > 0) ? dot / std::sqrt(na * nb) : 0.0;
        ++pairs;
      }
    out.mean_cosine = total / static_cast<double>(pairs);
  }
  double entropy = 0;
  std::size_t rows = 0;
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = head(h).subspan(i * n, n);
      double mass = 0;
      for (T e : row) mass += std::max(0.0, double(e));
      if (!(mass > 0)) {
        ++out.skipped_rows;
        continue;
      }
      double hrow = 0;
      for (T e : row) {
        const double p = std::max(0.0, double(e)) / mass;
        if (p > 0) hrow -= p * std::log(p);
      }
      entropy += hrow;
      ++rows;
    }
  out.mean_entropy = rows ? entropy / static_cast<double>(rows) : 0.0;
  return out;
}

template <typename T>
std::filesystem::path dump_bundle(const std::filesystem::path& dir, std::size_t block,
                                  const AttentionBundle<T>& bundle) {
  const auto path = dir / ("attn_b" + std::to_string(block) + "_" + stage_name(bundle.stage) + ".rvt");
  write_rvt(path, bundle.maps);
  return path;
}

#define REFINER_INSTANTIATE_ATTENTION(T)                                                                             \
  template RefinerWeights<Tensor<T>> init_refiner_weights<T>(const RefinerConfig&, Rng&, double);                   \
  template void add_refiner_weights<T>(Parameters<T>&, const std::string&, const RefinerConfig&,                    \
                                       RefinerWeights<Tensor<T>>);                                                  \
  template RefinerWeights<Var> refiner_vars<T>(const Parameters<T>&, const std::vector<Var>&, const std::string&,  \
                                               const RefinerConfig&);                                               \
  template RefinerWeights<Var> bind_refiner<T>(Tape<T>&, const RefinerConfig&, const RefinerWeights<Tensor<T>>&,   \
                                               bool);                                                               \
  template RawMaps compute_attention_maps<T>(Tape<T>&, Var, const RefinerWeights<Var>&, const RefinerConfig&);      \
  template Var mix_heads<T>(Tape<T>&, Var, Var);                                                                    \
  template Var dla_apply<T>(Tape<T>&, Var, Var, ConvMode, std::size_t);                                             \
  template Var aggregate<T>(Tape<T>&, Var, Var, Var, Var, std::size_t);                                             \
  template RefinerTrace refiner_forward<T>(Tape<T>&, Var, const RefinerWeights<Var>&, const RefinerConfig&, Var);   \
  template RawAttention<T> compute_attention_maps<T>(const Tensor<T>&, const RefinerWeights<Tensor<T>>&,           \
                                                     const RefinerConfig&);                                         \
  template AttentionBundle<T> expand_maps<T>(const AttentionBundle<T>&, const Tensor<T>&);                         \
  template AttentionBundle<T> dla_apply<T>(const AttentionBundle<T>&, const Tensor<T>&, ConvMode, std::size_t);    \
  template AttentionBundle<T> reduce_maps<T>(const AttentionBundle<T>&, const Tensor<T>&);                         \
  template Tensor<T> aggregate<T>(const AttentionBundle<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                  std::size_t);                                                                     \
  template RefinerOutput<T> refiner_forward<T>(const Tensor<T>&, const RefinerWeights<Tensor<T>>&,                 \
                                               const RefinerConfig&, const AttentionBundle<T>*);                    \
  template HeadDiversity head_diversity<T>(const AttentionBundle<T>&);                                              \
  template std::filesystem::path dump_bundle<T>(const std::filesystem::path&, std::size_t, const AttentionBundle<T>&);

REFINER_INSTANTIATE_ATTENTION(float)
REFINER_INSTANTIATE_ATTENTION(double)

}  // namespace refiner
