#include "refiner/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "refiner/format.hpp"
#include "refiner/ops.hpp"
#include "refiner/parallel.hpp"
#include "refiner/random.hpp"
#include "refiner/tape.hpp"

namespace refiner {

void TrainConfig::validate() const {
  if (steps == 0 && epochs == 0) throw ConfigError("training budget is empty: set steps or epochs");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("label_smoothing must be in [0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs},
          {"seed", c.seed},
          {"label_smoothing", c.label_smoothing},
          {"target_acc", c.target_acc}};
}

namespace {

std::size_t get_count(const nlohmann::json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_real(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  c.steps = get_count(j, "steps", c.steps);
  c.epochs = get_count(j, "epochs", c.epochs);
  c.batch_size = get_count(j, "batch_size", c.batch_size);
  c.base_lr = get_real(j, "base_lr", c.base_lr);
  c.weight_decay = get_real(j, "weight_decay", c.weight_decay);
  c.warmup_epochs = get_count(j, "warmup_epochs", c.warmup_epochs);
  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) throw ConfigError("config key 'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.label_smoothing = get_real(j, "label_smoothing", c.label_smoothing);
  c.target_acc = get_real(j, "target_acc", c.target_acc);
  return c;
}

Schedule make_schedule(const TrainConfig& cfg, std::size_t dataset_size) {
  cfg.validate();
  if (dataset_size < cfg.batch_size) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                      std::to_string(dataset_size));
  }
  Schedule s;
  s.steps_per_epoch = dataset_size / cfg.batch_size;  // the partial last batch is dropped
  s.total_steps = cfg.steps ? cfg.steps : cfg.epochs * s.steps_per_epoch;
  s.warmup_steps = std::min(cfg.warmup_epochs * s.steps_per_epoch, s.total_steps);
  s.peak_lr = cfg.peak_lr();
  return s;
}

double lr_at(std::size_t step, const Schedule& s) {
  if (step < s.warmup_steps) return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (s.total_steps <= s.warmup_steps) return s.peak_lr;
  const double t = static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
  return 0.5 * s.peak_lr * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
}

template <typename T>
LossGrad<T> cross_entropy(const Tensor<T>& logits, std::size_t label, T smoothing) {
  Tape<T> tape;
  const Var z = tape.variable(logits);
  const Var loss = cross_entropy(tape, z, label, smoothing);
  tape.backward(loss);
  return {tape.value(loss).item(), tape.grad(z)};
}

bool decays(const std::string& name) {
  if (name == "pos_embed" || name == "cls_token") return false;
  const std::size_t dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  static const char* exempt[] = {"bias", "b_q", "b_k", "b_v", "b_out", "b1", "b2", "gamma", "beta"};
  for (const char* e : exempt)
    if (leaf == e) return false;
  return true;
}

template <typename T>
std::vector<bool> decay_mask(const Parameters<T>& params) {
  std::vector<bool> mask(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) mask[i] = decays(params.name(i));
  return mask;
}

template <typename T>
void adamw_step(Parameters<T>& params, const std::vector<Tensor<T>>& grads, AdamWState<T>& state,
                const AdamWConfig& h, const std::vector<bool>& decay) {
  if (grads.size() != params.size() || decay.size() != params.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients and " + std::to_string(decay.size()) +
                         " decay flags");
  }
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params.at(i).shape());
      state.v.emplace_back(params.at(i).shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.at(i).data();
    auto g = grads[i].data();
    if (g.size() != p.size()) throw DimensionError("adamw_step: gradient shape mismatch for " + params.name(i));
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const double shrink = decay[i] ? 1.0 - h.lr * h.weight_decay : 1.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = (mk / c1) / (std::sqrt(vk / c2) + h.eps);
      p[k] = static_cast<T>(p[k] * shrink - h.lr * update);
    }
  }
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.img_size = 32;
  c.patch_size = 8;
  c.num_classes = 10;
  c.depth = 2;
  c.dim = 32;
  c.heads = 4;
  c.mlp_ratio = 4;
  c.refiner.ratio = 2;
  c.refiner.kernel = 3;
  c.refiner.share_next = 0;
  return c;
}

ModelConfig degenerate_twin(ModelConfig cfg) {
  cfg.refiner.ratio = 1;
  cfg.refiner.kernel = 1;
  return cfg;
}

// ---------------------------------------------------------------------------
// Synthetic patterns

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double frac(double x) { return x - std::floor(x); }

// Whether pattern `cls` covers the unit coordinates (u, v).
struct Pattern {
  std::size_t cls;
  double a, b, c, d;

  bool operator()(double u, double v) const {
    const double du = u - a, dv = v - b;
    const double r = std::hypot(du, dv);
    switch (cls) {
      case 0: return frac(v / c + d) < 0.5;                 // horizontal stripes
      case 1: return frac(u / c + d) < 0.5;                 // vertical stripes
      case 2: return frac((u + v) / c + d) < 0.5;           // diagonal stripes
      case 3: return frac((u - v) / c + d) < 0.5;           // anti-diagonal stripes
      case 4: {                                             // checkerboard
        const long s = static_cast<long>(std::floor(u / c + a)) + static_cast<long>(std::floor(v / c + b));
        return (s & 1) == 0;
      }
      case 5: return r < c;                                 // disk
      case 6: return std::abs(r - c) < d;                   // ring
      case 7:                                               // plus
        return (std::abs(du) < d && std::abs(dv) < c) || (std::abs(dv) < d && std::abs(du) < c);
      case 8: return std::max(std::abs(du), std::abs(dv)) < c;  // square
      default:                                              // triangle, apex up
        return dv > -c && dv < c && std::abs(du) <= 0.5 * (dv + c);
    }
  }
};

Pattern draw_pattern(std::size_t cls, Rng& rng) {
  Pattern p{cls, 0, 0, 0, 0};
  switch (cls) {
    case 0: case 1: case 2: case 3:
      p.c = rng.uniform(0.15, 0.3);
      p.d = rng.uniform();
      break;
    case 4:
      p.a = rng.uniform();
      p.b = rng.uniform();
      p.c = rng.uniform(0.12, 0.25);
      break;
    default:
      p.a = rng.uniform(0.38, 0.62);
      p.b = rng.uniform(0.38, 0.62);
      if (cls == 5) p.c = rng.uniform(0.18, 0.3);
      if (cls == 6) { p.c = rng.uniform(0.22, 0.32); p.d = rng.uniform(0.04, 0.06); }
      if (cls == 7) { p.c = rng.uniform(0.25, 0.38); p.d = rng.uniform(0.06, 0.1); }
      if (cls == 8) p.c = rng.uniform(0.15, 0.28);
      if (cls == 9) p.c = rng.uniform(0.2, 0.3);
  }
  return p;
}

}  // namespace

const std::vector<std::string>& SyntheticShapes::pattern_names() {
  static const std::vector<std::string> names{"hstripes", "vstripes", "diag", "antidiag", "checker",
                                              "disk",     "ring",     "plus", "square",   "triangle"};
  return names;
}

LabeledImages SyntheticShapes::generate() const {
  if (classes < 2 || classes > pattern_names().size()) {
    throw ConfigError("synthetic dataset supports 2.." + std::to_string(pattern_names().size()) + " classes, got " +
                      std::to_string(classes));
  }
  if (count == 0 || img_size == 0 || channels == 0) throw ConfigError("synthetic dataset dimensions must be positive");
  LabeledImages out;
  out.classes = classes;
  out.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % classes;
    Rng rng(splitmix(seed ^ splitmix(i)));
    const Pattern pat = draw_pattern(label, rng);
    std::vector<double> fg(channels), bg(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      fg[c] = rng.uniform(0.55, 1.0);
      bg[c] = rng.uniform(0.0, 0.3);
    }
    Tensor<float> img({channels, img_size, img_size});
    const double s = static_cast<double>(img_size);
    for (std::size_t y = 0; y < img_size; ++y) {
      for (std::size_t x = 0; x < img_size; ++x) {
        const bool on = pat((x + 0.5) / s, (y + 0.5) / s);
        for (std::size_t c = 0; c < channels; ++c) {
          const double v = (on ? fg[c] : bg[c]) + rng.normal(0.0, 0.04);
          img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loop

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "step,epoch,lr,train_loss,train_acc\n";
  for (const auto& r : history) {
    f << r.step << ',' << r.epoch << ',' << format_number(r.lr) << ',' << format_number(r.train_loss) << ','
      << format_number(r.train_acc) << '\n';
  }
}

template <typename T>
std::size_t argmax(const Tensor<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <typename T>
TrainResult<T> train(const ModelConfig& model, const TrainConfig& cfg, const LabeledImages& data,
                     const TrainOptions& opts) {
  model.validate();
  const Schedule sched = make_schedule(cfg, data.size());
  if (data.classes != model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.classes) + " classes, model expects " +
                      std::to_string(model.num_classes));
  }

  TrainResult<T> res;
  Rng init_rng(cfg.seed);
  res.params = init_model<T>(model, init_rng);
  res.parameter_count = res.params.numel();
  const std::vector<bool> mask = decay_mask(res.params);
  AdamWState<T> state;
  AdamWConfig hyper;
  hyper.weight_decay = cfg.weight_decay;

  Rng order_rng(splitmix(cfg.seed ^ 0x5eed0fba7c4e5ULL));
  std::vector<std::size_t> order(data.size());
  const std::size_t workers = worker_count(cfg.threads);
  const std::size_t B = cfg.batch_size;
  const T smoothing = static_cast<T>(cfg.label_smoothing);

  std::vector<std::vector<std::pair<std::size_t, Tensor<T>>>> sample_grads(B);
  std::vector<T> sample_loss(B);
  std::vector<char> sample_hit(B);
  double epoch_loss = 0;
  std::size_t epoch_hits = 0;

  for (std::size_t step = 0; step < sched.total_steps; ++step) {
    const std::size_t epoch = step / sched.steps_per_epoch;
    const std::size_t pos = step % sched.steps_per_epoch;
    if (pos == 0) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
      epoch_loss = 0;
      epoch_hits = 0;
    }

    try {
      parallel_for(B, workers, [&](std::size_t i) {
        const std::size_t idx = order[pos * B + i];
        Tape<T> tape;
        Binder<T> bind(tape, res.params, true);
        const ModelTrace tr = model_forward(bind, model, data.images[idx].template cast<T>());
        const Var loss = cross_entropy(tape, tr.logits, data.labels[idx], smoothing);
        tape.backward(loss);
        sample_loss[i] = tape.value(loss).item();
        sample_hit[i] = argmax(tape.value(tr.logits)) == data.labels[idx];
        auto& out = sample_grads[i];
        out.clear();
        for (const auto& [pi, var] : bind.bound()) out.emplace_back(pi, tape.grad(var));
      });
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }

    // Reduce in sample order so the sum never depends on the worker count.
    std::vector<Tensor<T>> grads;
    grads.reserve(res.params.size());
    for (std::size_t p = 0; p < res.params.size(); ++p) grads.emplace_back(res.params.at(p).shape());
    double batch_loss = 0;
    for (std::size_t i = 0; i < B; ++i) {
      batch_loss += sample_loss[i];
      epoch_hits += sample_hit[i] ? 1 : 0;
      for (const auto& [pi, g] : sample_grads[i]) {
        auto dst = grads[pi].data();
        auto src = g.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    batch_loss /= static_cast<double>(B);
    if (!std::isfinite(batch_loss)) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": loss is " +
                         format_number(batch_loss));
    }
    const T inv = T(1) / static_cast<T>(B);
    for (auto& g : grads)
      for (auto& x : g.data()) x *= inv;

    hyper.lr = lr_at(step, sched);
    adamw_step(res.params, grads, state, hyper, mask);
    res.step_loss.push_back(batch_loss);
    epoch_loss += batch_loss;

    if (pos + 1 == sched.steps_per_epoch || step + 1 == sched.total_steps) {
      EpochRecord r;
      r.step = step;
      r.epoch = epoch;
      r.lr = lr_at(step, sched);
      r.train_loss = epoch_loss / static_cast<double>(pos + 1);
      r.train_acc = static_cast<double>(epoch_hits) / static_cast<double>((pos + 1) * B);
      res.history.push_back(r);
      if (!res.steps_to_target && r.train_acc >= cfg.target_acc) res.steps_to_target = step + 1;
      if (opts.on_epoch) opts.on_epoch(r);
    }
  }

  res.final_train_acc = evaluate(res.params, model, data, cfg.threads).accuracy;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    write_history_csv(opts.out_dir / "history.csv", res.history);
    save_checkpoint(opts.out_dir / "checkpoint", model, res.params);
  }
  return res;
}

template <typename T>
EvalResult evaluate(const Parameters<T>& params, const ModelConfig& cfg, const LabeledImages& data,
                    std::size_t threads) {
  EvalResult r;
  r.total = data.size();
  r.predictions.resize(data.size());
  std::vector<double> losses(data.size());
  parallel_for(data.size(), worker_count(threads), [&](std::size_t i) {
    const ForwardResult<T> f = model_forward(data.images[i].template cast<T>(), params, cfg);
    r.predictions[i] = argmax(f.logits);
    losses[i] = cross_entropy(f.logits, data.labels[i]).loss;
  });
  double loss = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    loss += losses[i];
    r.correct += r.predictions[i] == data.labels[i] ? 1 : 0;
  }
  if (r.total) {
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    r.mean_loss = loss / static_cast<double>(r.total);
  }
  return r;
}

#define REFINER_INSTANTIATE_TRAINING(T)                                                                     \
  template LossGrad<T> cross_entropy<T>(const Tensor<T>&, std::size_t, T);                                \
  template std::vector<bool> decay_mask<T>(const Parameters<T>&);                                         \
  template void adamw_step<T>(Parameters<T>&, const std::vector<Tensor<T>>&, AdamWState<T>&,              \
                              const AdamWConfig&, const std::vector<bool>&);                              \
  template std::size_t argmax<T>(const Tensor<T>&);                                                       \
  template TrainResult<T> train<T>(const ModelConfig&, const TrainConfig&, const LabeledImages&,          \
                                   const TrainOptions&);                                                  \
  template EvalResult evaluate<T>(const Parameters<T>&, const ModelConfig&, const LabeledImages&, std::size_t);

REFINER_INSTANTIATE_TRAINING(float)
REFINER_INSTANTIATE_TRAINING(double)

}  // namespace refiner
