// Acceptance report: one PASS/FAIL line per criterion. Exits 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cka_oracle.hpp"
#include "refiner/analysis.hpp"
#include "refiner/attention.hpp"
#include "refiner/format.hpp"
#include "refiner/gradcheck.hpp"
#include "refiner/imaging.hpp"
#include "refiner/model.hpp"
#include "refiner/training.hpp"
#include "refiner/verify.hpp"

using namespace refiner;
using refiner::testing::cka_hsic_oracle;
using refiner::testing::matmul_plain;
using refiner::testing::random_orthogonal;
using T64 = Tensor<double>;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) { return format_number(v); }

struct Outcome {
  bool pass;
  std::string detail;
};

T64 randn(Rng& rng, Shape s, double stddev = 1.0) { return rng.normal_tensor<double>(std::move(s), stddev); }

double max_abs(const T64& a, const T64& b) { return max_abs_diff(a, b); }

// ---- 1 ----

Outcome algebraic_equivalences() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const std::size_t ks[] = {1, 3, 5};
  double worst_dla = 0, worst_exp = 0;
  int count = 0;
  for (int i = 0; i < 120; ++i) {
    const std::size_t n = 1 + rng.index(16), k = ks[i % 3], dv = 1 + rng.index(6);
    worst_dla = std::max(worst_dla, check_dla_1d_equivalence(randn(rng, {n}), randn(rng, {k}), randn(rng, {dv, n})));
    ++count;
  }
  for (int i = 0; i < 120; ++i) {
    const std::size_t H = 1 + rng.index(4), r = 1 + rng.index(4), dh = 1 + rng.index(4), n = 1 + rng.index(16);
    const std::size_t d = H * dh;
    const T64 x = randn(rng, {d, n}), wq = randn(rng, {d, d}), wk = randn(rng, {d, d});
    const T64 we = randn(rng, {r * H, H});
    worst_exp = std::max(worst_exp, check_expansion_equivalence(x, wq, wk, we, rng.index(r * H), H));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_dla <= 1e-12 && worst_exp <= 1e-10 && secs < 10;
  return {pass, "dla max " + num(worst_dla) + " (<= 1e-12, " + std::to_string(count) + " inst), expansion max " +
                    num(worst_exp) + " (<= 1e-10, 120 inst), " + num(std::round(secs * 1000) / 1000) + " s"};
}

// ---- 2 ----

RefinerWeights<T64> degenerate_weights(const RefinerConfig& cfg, const RefinerWeights<T64>& vanilla) {
  RefinerWeights<T64> w = vanilla;
  w.w_expand = T64::identity(cfg.heads);
  w.w_reduce = T64::identity(cfg.heads);
  w.kernels = T64(cfg.kernel_shape());
  for (std::size_t h = 0; h < cfg.heads; ++h) w.kernels.at(h, cfg.kernel / 2, cfg.kernel / 2) = 1.0;
  return w;
}

Outcome degeneracy() {
  Rng rng(202);
  int layer_equal = 0;
  const int layer_trials = 24;
  for (int i = 0; i < layer_trials; ++i) {
    RefinerConfig refined;
    refined.heads = 1 + rng.index(4);
    refined.d_in = refined.heads * (1 + rng.index(4));
    refined.ratio = 1;
    refined.kernel = 3;
    RefinerConfig vanilla = refined;
    vanilla.refine = false;
    auto wv = init_refiner_weights<double>(vanilla, rng);
    for_each_weight(vanilla, wv, [&](const char*, T64& t) { t = randn(rng, t.shape(), 0.5); });
    const T64 x = randn(rng, {refined.d_in, 1 + rng.index(12)});
    layer_equal += refiner_forward(x, degenerate_weights(refined, wv), refined).y == refiner_forward(x, wv, vanilla).y;
  }

  ModelConfig van = tiny_model_config();
  van.img_size = 16;
  van.refiner.refine = false;
  ModelConfig deg = van;
  deg.refiner.refine = true;
  deg.refiner.ratio = 1;
  deg.refiner.kernel = 3;
  Parameters<double> pv = random_parameters(van, 203);
  Rng init_rng(204);
  Parameters<double> pd = init_model<double>(deg, init_rng, 0.0);
  for (std::size_t i = 0; i < pd.size(); ++i)
    if (pv.contains(pd.name(i))) pd.at(i) = pv[pd.name(i)];
  double worst_model = 0;
  for (int i = 0; i < 5; ++i) {
    const T64 img = rng.uniform_tensor<double>({3, 16, 16}, 0.0, 1.0);
    worst_model = std::max(worst_model, max_abs(model_forward(img, pd, deg).logits, model_forward(img, pv, van).logits));
  }
  const bool pass = layer_equal == layer_trials && worst_model <= 1e-10;
  return {pass, "layer bit-identical " + std::to_string(layer_equal) + "/" + std::to_string(layer_trials) +
                    ", whole model max " + num(worst_model) + " (<= 1e-10)"};
}

// ---- 3 ----

Outcome gradients() {
  const auto t0 = Clock::now();
  Rng rng(303);
  double worst_op = 0, worst_block = 0;
  std::string worst_op_name;
  std::size_t ops = 0, op_checks = 0;
  for (const auto& c : primitive_grad_cases()) {
    ++ops;
    for (int s = 0; s < 5; ++s, ++op_checks) {
      const double e = grad_check(c.fn, c.make(rng)).max_rel_error();
      if (e > worst_op) {
        worst_op = e;
        worst_op_name = c.op;
      }
    }
  }
  std::uint64_t seed = 304;
  const auto cfgs = block_check_configs();
  for (const auto& c : cfgs) worst_block = std::max(worst_block, check_block_gradients(c, seed++).max_rel_error());
  const double secs = seconds_since(t0);
  const bool covered = ops == primitive_op_names().size();
  const bool pass = covered && worst_op <= 1e-4 && worst_block <= 1e-4 && cfgs.size() >= 5 && secs < 120;
  return {pass, std::to_string(ops) + " ops x 5 shapes, worst " + num(worst_op) + " (" + worst_op_name + "); " +
                    std::to_string(cfgs.size()) + " block configs, worst " + num(worst_block) + "; " +
                    num(std::round(secs * 10) / 10) + " s"};
}

// ---- 4 ----

Outcome parameter_counts() {
  const std::vector<std::pair<std::string, double>> table = {{"S", 25e6}, {"M", 55e6}, {"L", 81e6}, {"Base", 86e6}};
  bool pass = true;
  std::string detail;
  for (const auto& [name, target] : table) {
    const ModelConfig c = preset(name);
    const double got = double(count_params(c));
    const double rel = (got - target) / target;
    const std::size_t over = refiner_overhead(c);
    const bool ok = std::abs(rel) <= 0.05 && over < 1000000;
    pass = pass && ok;
    detail += name + " " + num(std::round(got / 1e4) / 100) + "M (" + num(std::round(rel * 1e4) / 100) +
              "%, overhead " + std::to_string(over) + (ok ? ") " : ", OUT OF BAND) ");
  }
  return {pass, detail};
}

// ---- 5 ----

Outcome flop_counts() {
  const std::vector<std::pair<std::string, double>> table = {{"S", 7.2e9}, {"M", 13.5e9}};
  bool pass = true;
  std::string detail;
  for (const auto& [name, target] : table) {
    const double got = double(count_flops(preset(name), 224).total());
    const double rel = (got - target) / target;
    const bool ok = std::abs(rel) <= 0.10;
    pass = pass && ok;
    detail += name + " " + num(std::round(got / 1e7) / 100) + "B MACs (" + num(std::round(rel * 1e4) / 100) +
              (ok ? "%) " : "%, OUT OF BAND) ");
  }
  return {pass, detail};
}

// ---- 6 ----

Outcome cka() {
  Rng rng(606);
  double self = 0, sym = 0, inv = 0, oracle = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 6 + rng.index(10), p = 1 + rng.index(6), q = 1 + rng.index(6);
    const T64 x = randn(rng, {n, p}), y = randn(rng, {n, q});
    self = std::max(self, std::abs(linear_cka(x, x) - 1.0));
    sym = std::max(sym, std::abs(linear_cka(x, y) - linear_cka(y, x)));
    const double ref = linear_cka(x, y);
    const T64 xr = matmul_plain(x, random_orthogonal(rng, p));
    T64 ys = matmul_plain(y, random_orthogonal(rng, q));
    const double scale = rng.uniform(0.3, 5.0);
    for (auto& v : ys.data()) v *= scale;
    inv = std::max(inv, std::abs(linear_cka(xr, ys) - ref));
    oracle = std::max(oracle, std::abs(ref - cka_hsic_oracle(x, y)));
  }
  const bool pass = self <= 1e-9 && sym <= 1e-12 && inv <= 1e-9 && oracle <= 1e-10;
  return {pass, "|CKA(X,X)-1| " + num(self) + ", symmetry " + num(sym) + ", rotation/scale " + num(inv) +
                    ", oracle " + num(oracle) + " (50 pairs)"};
}

// ---- 7 ----

struct ArmResult {
  double acc = 0;
  std::optional<std::size_t> steps;
  double secs = 0;
  bool reproducible = false;
};

ArmResult train_arm(const ModelConfig& cfg, const LabeledImages& data, const TrainConfig& tc) {
  ArmResult r;
  const auto t0 = Clock::now();
  const TrainResult<float> a = train<float>(cfg, tc, data);
  r.secs = seconds_since(t0);
  r.acc = a.final_train_acc;
  r.steps = a.steps_to_target;
  const TrainResult<float> b = train<float>(cfg, tc, data);
  r.reproducible = a.step_loss == b.step_loss;
  for (std::size_t i = 0; r.reproducible && i < a.params.size(); ++i) r.reproducible = a.params.at(i) == b.params.at(i);
  return r;
}

Outcome desk_training() {
  SyntheticShapes shapes;  // 256 samples, 10 classes
  const LabeledImages data = shapes.generate();
  TrainConfig tc;  // 2000 steps
  tc.threads = 1;
  const ModelConfig refined = tiny_model_config();
  const ArmResult a = train_arm(refined, data, tc);
  const ArmResult b = train_arm(degenerate_twin(refined), data, tc);
  const auto arm_ok = [](const ArmResult& r) { return r.acc >= 0.99 && r.steps && *r.steps <= 2000 && r.reproducible; };
  const double total = a.secs + b.secs;
  const bool pass = arm_ok(a) && arm_ok(b) && total < 600;
  const auto describe_arm = [](const char* name, const ArmResult& r) {
    return std::string(name) + " acc " + num(r.acc) + " at step " + (r.steps ? std::to_string(*r.steps) : "never") +
           ", " + num(std::round(r.secs)) + " s, " + (r.reproducible ? "bit-reproducible" : "NOT reproducible");
  };
  return {pass, describe_arm("refined", a) + "; " + describe_arm("degenerate", b) + "; total " +
                    num(std::round(total)) + " s on 1 thread"};
}

// ---- 8 ----

Outcome rfc_arithmetic() {
  const RfcGeometry a = rfc_geometry(800, 1.12), b = rfc_geometry(448, 1.13);
  bool pass = a.content == 714 && a.pad_before == 43 && a.pad_after == 43 && b.content == 396 && b.pad_before == 26 &&
              b.pad_after == 26;
  // Border pixels of a strictly positive image must be exactly zero.
  Rng rng(808);
  const Tensor<float> img = rng.uniform_tensor<float>({3, 500, 450}, 0.1f, 1.0f);
  const Tensor<float> out = rfc_pad(img, 448, 1.13);
  std::size_t border = 0, nonzero = 0, content_zero = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 448; ++y)
      for (std::size_t x = 0; x < 448; ++x) {
        const bool inside = y >= 26 && y < 26 + 396 && x >= 26 && x < 26 + 396;
        if (inside) {
          content_zero += out.at(c, y, x) == 0.0f;
        } else {
          ++border;
          nonzero += out.at(c, y, x) != 0.0f;
        }
      }
  pass = pass && nonzero == 0 && content_zero == 0;
  return {pass, "800/1.12 -> " + std::to_string(a.content) + " pad " + std::to_string(a.pad_before) + "/" +
                    std::to_string(a.pad_after) + "; 448/1.13 -> " + std::to_string(b.content) + " pad " +
                    std::to_string(b.pad_before) + "/" + std::to_string(b.pad_after) + "; " +
                    std::to_string(nonzero) + " nonzero of " + std::to_string(border) + " border values"};
}

// ---- 9 ----

Outcome sharing_invariance() {
  ModelConfig c = tiny_model_config();
  c.img_size = 16;
  c.refiner.share_next = 1;
  double worst = 0, changed_when_computing = 1e300;
  for (int trial = 0; trial < 10; ++trial) {
    Parameters<double> p = random_parameters(c, 900 + trial);
    Rng rng(950 + trial);
    const T64 img = rng.uniform_tensor<double>({3, 16, 16}, 0.0, 1.0);
    const auto block1 = [&](const Parameters<double>& params) {
      Tape<double> tape;
      Binder<double> bind(tape, params, false);
      const ModelTrace tr = model_forward(bind, c, img);
      return tape.value(tr.blocks[1].attn.out);
    };
    const T64 before = block1(p);
    Parameters<double> q = p;
    for (const char* name : {"attn.w_q", "attn.w_k", "attn.b_q", "attn.b_k"}) {
      T64& t = q[std::string("blocks.1.") + name];
      t = rng.normal_tensor<double>(t.shape(), 1.0);
    }
    worst = std::max(worst, max_abs(block1(q), before));
    // Control: the same perturbation on the computing block must change things.
    Parameters<double> r = p;
    r["blocks.0.attn.w_q"] = rng.normal_tensor<double>(r["blocks.0.attn.w_q"].shape(), 1.0);
    changed_when_computing = std::min(changed_when_computing, max_abs(block1(r), before));
  }
  const bool pass = worst <= 1e-12 && changed_when_computing > 1e-6;
  return {pass, "reusing block max diff " + num(worst) + " (<= 1e-12) over 10 perturbations; control on computing block " +
                    num(changed_when_computing)};
}

// ---- 10 ----

Outcome softmax_stage() {
  Rng rng(1010);
  double worst = 0;
  bool nonneg = true;
  for (int i = 0; i < 1000; ++i) {
    RefinerConfig cfg;
    cfg.heads = 1 + rng.index(4);
    cfg.d_in = cfg.heads * (1 + rng.index(4));
    auto w = init_refiner_weights<double>(cfg, rng);
    for_each_weight(cfg, w, [&](const char*, T64& t) { t = randn(rng, t.shape(), 1.5); });
    const std::size_t n = 1 + rng.index(16);
    const T64 maps = compute_attention_maps(randn(rng, {cfg.d_in, n}, 2.0), w, cfg).bundle.maps;
    for (std::size_t row = 0; row < maps.size() / n; ++row) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        s += maps[row * n + j];
        nonneg = nonneg && maps[row * n + j] >= 0;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  // A negative expansion weight must be able to yield a negative entry.
  RefinerConfig cfg;
  cfg.d_in = 8;
  cfg.heads = 2;
  cfg.ratio = 2;
  cfg.kernel = 1;
  auto w = init_refiner_weights<double>(cfg, rng);
  w.w_expand = T64::matrix({{1, -2}, {0, 1}, {1, 0}, {0.5, 0.5}});
  const auto out = refiner_forward(randn(rng, {8, 6}), w, cfg);
  double min_expanded = 1e300;
  for (const auto& b : out.stages)
    if (b.stage == Stage::Expanded)
      min_expanded = *std::min_element(b.maps.data().begin(), b.maps.data().end());
  const bool pass = worst <= 1e-6 && nonneg && min_expanded < 0;
  return {pass, "raw row sums max |s-1| " + num(worst) + " over 1000 instances, all entries >= 0: " +
                    (nonneg ? "yes" : "no") + "; min expanded entry with negative W_expand " + num(min_expanded)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"algebraic equivalences", algebraic_equivalences},
      {"degeneracy", degeneracy},
      {"gradient verification", gradients},
      {"parameter counts", parameter_counts},
      {"FLOP counts", flop_counts},
      {"CKA correctness", cka},
      {"desk-scale training", desk_training},
      {"padded-crop arithmetic", rfc_arithmetic},
      {"attention sharing", sharing_invariance},
      {"softmax-stage normalization", softmax_stage},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria pass\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
