#include "refiner/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "refiner/format.hpp"
#include "refiner/parallel.hpp"
#include "refiner/random.hpp"
#include "refiner/rvt.hpp"

namespace refiner {

namespace {

// Column-centered copy and the Frobenius norm of the original.
std::vector<double> centered(const Tensor<double>& x, double& raw_norm) {
  const std::size_t n = x.dim(0), p = x.dim(1);
  std::vector<double> c(x.values());
  raw_norm = 0;
  for (double v : c) raw_norm += v * v;
  raw_norm = std::sqrt(raw_norm);
  for (std::size_t j = 0; j < p; ++j) {
    double mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += c[i * p + j];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) c[i * p + j] -= mu;
  }
  return c;
}

// Gram matrix K = Xc Xc^T, [n x n].
std::vector<double> gram(const std::vector<double>& c, std::size_t n, std::size_t p) {
  std::vector<double> k(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      double s = 0;
      for (std::size_t j = 0; j < p; ++j) s += c[a * p + j] * c[b * p + j];
      k[a * n + b] = k[b * n + a] = s;
    }
  return k;
}

bool negligible(const std::vector<double>& c, double raw_norm) {
  double s = 0;
  for (double v : c) s += v * v;
  return !(std::sqrt(s) > 1e-12 * raw_norm) || s < 1e-300;
}

}  // namespace

double linear_cka(const Tensor<double>& x, const Tensor<double>& y) {
  if (x.rank() != 2 || y.rank() != 2) throw DimensionError("linear_cka expects two matrices");
  const std::size_t n = x.dim(0);
  if (y.dim(0) != n) {
    throw DimensionError("linear_cka: " + std::to_string(n) + " vs " + std::to_string(y.dim(0)) + " examples");
  }
  if (n < 2) throw DimensionError("linear_cka needs at least 2 examples");
  double nx = 0, ny = 0;
  const std::vector<double> cx = centered(x, nx), cy = centered(y, ny);
  if (negligible(cx, nx) || negligible(cy, ny)) return 0.0;
  // ||Yc^T Xc||_F^2 = <Kx, Ky>_F, ||Xc^T Xc||_F = ||Kx||_F.
  const std::vector<double> kx = gram(cx, n, x.dim(1)), ky = gram(cy, n, y.dim(1));
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < n * n; ++i) {
    xy += kx[i] * ky[i];
    xx += kx[i] * kx[i];
    yy += ky[i] * ky[i];
  }
  const double denom = std::sqrt(xx) * std::sqrt(yy);
  if (!(denom > 0)) return 0.0;
  return xy / denom;
}

template <typename T>
void verify_params(const ModelConfig& cfg, const Parameters<T>& params) {
  Rng rng(0);
  const Parameters<T> expected = init_model<T>(cfg, rng);
  if (expected.size() != params.size()) {
    throw FormatError("checkpoint/config mismatch: " + std::to_string(params.size()) + " tensors, config implies " +
                      std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.name(i) != params.name(i) || expected.at(i).shape() != params.at(i).shape()) {
      throw FormatError("checkpoint/config mismatch at " + params.name(i) + " " + shape_str(params.at(i).shape()) +
                        ", expected " + expected.name(i) + " " + shape_str(expected.at(i).shape()));
    }
  }
}

template <typename T>
EvolutionReport feature_evolution(const ModelConfig& cfg, const Parameters<T>& params, const LabeledImages& images,
                                  std::size_t batch, std::size_t runs, std::uint64_t seed) {
  verify_params(cfg, params);
  if (batch < 2 || batch > images.size()) {
    throw ConfigError("feature_evolution batch " + std::to_string(batch) + " must be in [2, " +
                      std::to_string(images.size()) + "]");
  }
  if (runs == 0) throw ConfigError("feature_evolution needs at least one run");
  EvolutionReport rep;
  rep.batch = batch;
  rep.runs = runs;
  rep.scores.assign(cfg.depth, 0.0);
  const std::size_t width = cfg.dim * cfg.seq_len();
  ForwardOptions opts;
  opts.keep_features = true;

  for (std::size_t run = 0; run < runs; ++run) {
    Rng rng(seed + 0x9e3779b97f4a7c15ULL * (run + 1));
    std::vector<std::size_t> pick(images.size());
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    for (std::size_t i = 0; i < batch; ++i) std::swap(pick[i], pick[i + rng.index(pick.size() - i)]);

    Tensor<double> f_in({batch, width});
    std::vector<Tensor<double>> f(cfg.depth, Tensor<double>({batch, width}));
    parallel_for(batch, worker_count(), [&](std::size_t i) {
      const ForwardResult<T> r = model_forward(images.images[pick[i]].template cast<T>(), params, cfg, opts);
      const auto put = [&](Tensor<double>& dst, const Tensor<T>& src) {
        for (std::size_t k = 0; k < width; ++k) dst[i * width + k] = static_cast<double>(src[k]);
      };
      put(f_in, r.embeddings);
      for (std::size_t b = 0; b < cfg.depth; ++b) put(f[b], r.block_outputs[b]);
    });

    const Tensor<double>& f_out = f.back();
    const double base = linear_cka(f_in, f_out);
    rep.cka_in_out += base / static_cast<double>(runs);
    for (std::size_t b = 0; b < cfg.depth; ++b) {
      const double kb = b + 1 == cfg.depth ? linear_cka(f_out, f_out) : linear_cka(f[b], f_out);
      const double score = base > 0 ? kb / base : std::numeric_limits<double>::infinity();
      rep.scores[b] += score / static_cast<double>(runs);
    }
  }
  return rep;
}

void write_evolution_csv(const std::filesystem::path& path, const EvolutionReport& r) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "# features: all tokens per block output, class token included; batch " << r.batch << ", runs " << r.runs
    << ", mean CKA(f_in, f_out) " << format_number(r.cka_in_out) << '\n';
  f << "block,F_k\n";
  for (std::size_t b = 0; b < r.scores.size(); ++b) f << b << ',' << format_number(r.scores[b]) << '\n';
}

template <typename T>
std::vector<DiversityRow> diversity_report(const ModelConfig& cfg, const Parameters<T>& params,
                                           const LabeledImages& images, const std::filesystem::path& dump_dir) {
  verify_params(cfg, params);
  if (images.size() == 0) throw ConfigError("diversity_report needs at least one image");
  ForwardOptions opts;
  opts.keep_maps = true;
  std::vector<ForwardResult<T>> results(images.size());
  parallel_for(images.size(), worker_count(), [&](std::size_t i) {
    results[i] = model_forward(images.images[i].template cast<T>(), params, cfg, opts);
    results[i].logits = {};
  });

  if (!dump_dir.empty()) std::filesystem::create_directories(dump_dir);
  std::vector<DiversityRow> rows;
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    for (std::size_t s = 0; s < results[0].maps[b].size(); ++s) {
      DiversityRow row;
      row.block = b;
      row.stage = results[0].maps[b][s].stage;
      for (const auto& r : results) {
        const HeadDiversity d = head_diversity(r.maps[b][s]);
        row.stats.mean_cosine += d.mean_cosine / static_cast<double>(results.size());
        row.stats.mean_entropy += d.mean_entropy / static_cast<double>(results.size());
        row.stats.skipped_rows += d.skipped_rows;
      }
      rows.push_back(row);
      if (!dump_dir.empty()) dump_bundle(dump_dir, b, results[0].maps[b][s]);
    }
  }
  return rows;
}

void write_diversity_csv(const std::filesystem::path& path, const std::vector<DiversityRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "block,stage,mean_cosine,mean_entropy,skipped_rows\n";
  for (const auto& r : rows) {
    f << r.block << ',' << stage_name(r.stage) << ',' << format_number(r.stats.mean_cosine) << ','
      << format_number(r.stats.mean_entropy) << ',' << r.stats.skipped_rows << '\n';
  }
}

// ---------------------------------------------------------------------------
// Ablation grid

const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes{"expansion_ratio", "kernel_size", "conv_mode",
                                             "reduction",       "share_next",  "heads"};
  return axes;
}

namespace {

std::size_t parse_count(const std::string& axis, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty() || value[0] == '-') {
    throw ConfigError("invalid " + axis + " value '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

ModelConfig apply_axis(ModelConfig cfg, const std::string& axis, const std::string& value) {
  RefinerConfig& r = cfg.refiner;
  if (axis == "expansion_ratio") {
    r.ratio = parse_count(axis, value);
  } else if (axis == "kernel_size") {
    r.kernel = parse_count(axis, value);
  } else if (axis == "conv_mode") {
    r.conv_mode = parse_conv_mode(value);
  } else if (axis == "reduction") {
    if (value == "1" || value == "on" || value == "true") r.use_reduction = true;
    else if (value == "0" || value == "off" || value == "false") r.use_reduction = false;
    else throw ConfigError("invalid reduction value '" + value + "' (on/off)");
  } else if (axis == "share_next") {
    r.share_next = parse_count(axis, value);
  } else if (axis == "heads") {
    cfg.heads = parse_count(axis, value);
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "'");
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("invalid " + axis + " value '" + value + "': " + e.what());
  }
  return cfg;
}

AblationResult ablation_grid(const std::string& axis, const std::vector<std::string>& values, const ModelConfig& base,
                             const TrainConfig& train_cfg, const LabeledImages& data) {
  AblationResult res;
  res.axis = axis;
  std::vector<ModelConfig> cells;
  for (const auto& v : values) cells.push_back(apply_axis(base, axis, v));  // reject bad values before training
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const ShareSchedule sched = share_schedule(cells[i]);
    if (sched.warning) res.warnings.push_back(axis + "=" + values[i] + ": " + *sched.warning);
    const TrainResult<float> tr = train<float>(cells[i], train_cfg, data);
    AblationRow row;
    row.value = values[i];
    row.params = tr.parameter_count;
    row.final_acc = tr.final_train_acc;
    row.final_loss = tr.history.empty() ? 0.0 : tr.history.back().train_loss;
    row.steps_to_target = tr.steps_to_target;
    res.rows.push_back(row);
  }
  return res;
}

std::filesystem::path write_ablation_csv(const std::filesystem::path& dir, const AblationResult& r) {
  std::filesystem::create_directories(dir);
  const auto path = dir / ("ablation_" + r.axis + ".csv");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "value,params,final_acc,final_loss,steps_to_target\n";
  for (const auto& row : r.rows) {
    f << row.value << ',' << row.params << ',' << format_number(row.final_acc) << ','
      << format_number(row.final_loss) << ',';
    if (row.steps_to_target) f << *row.steps_to_target;
    f << '\n';
  }
  return path;
}

#define REFINER_INSTANTIATE_ANALYSIS(T)                                                                         \
  template void verify_params<T>(const ModelConfig&, const Parameters<T>&);                                   \
  template EvolutionReport feature_evolution<T>(const ModelConfig&, const Parameters<T>&, const LabeledImages&, \
                                                std::size_t, std::size_t, std::uint64_t);                     \
  template std::vector<DiversityRow> diversity_report<T>(const ModelConfig&, const Parameters<T>&,             \
                                                         const LabeledImages&, const std::filesystem::path&);

REFINER_INSTANTIATE_ANALYSIS(float)
REFINER_INSTANTIATE_ANALYSIS(double)

}  // namespace refiner
