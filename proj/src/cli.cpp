#include "refiner/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "refiner/analysis.hpp"
#include "refiner/format.hpp"
#include "refiner/gradcheck.hpp"
#include "refiner/imaging.hpp"
#include "refiner/rvt.hpp"
#include "refiner/verify.hpp"

namespace refiner::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k{"preset", "samples", "data_seed"};
    const json m = to_json(ModelConfig{});
    for (auto it = m.begin(); it != m.end(); ++it) k.push_back(it.key());
    const json t = to_json(TrainConfig{});
    for (auto it = t.begin(); it != t.end(); ++it) k.push_back(it.key());
    return k;
  }();
  return keys;
}

namespace {

ModelConfig base_model(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "tiny") return tiny_model_config();
  if (n == "tiny-degenerate") return degenerate_twin(tiny_model_config());
  return preset(name);
}

}  // namespace

ResolvedConfig resolve_config(const json& input) {
  json flat = input;
  if (flat.is_object() && flat.contains("command") && flat.contains("config")) flat = flat.at("config");
  if (!flat.is_object()) throw ConfigError("config must be a JSON object");
  const auto& keys = config_keys();
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
      throw ConfigError("unknown config key '" + it.key() + "'");
    }
  }
  ResolvedConfig r;
  std::string preset_name = "tiny";
  if (flat.contains("preset")) {
    if (!flat.at("preset").is_string()) throw ConfigError("config key 'preset' must be a string");
    preset_name = flat.at("preset").get<std::string>();
  }
  r.model = model_config_from_json(flat, base_model(preset_name));
  r.model.validate();
  r.train = train_config_from_json(flat);
  r.train.validate();
  const auto get_u64 = [&](const char* key, std::uint64_t fallback) {
    if (!flat.contains(key)) return fallback;
    const auto& v = flat.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
    return flat.at(key).get<std::uint64_t>();
  };
  r.samples = get_u64("samples", 256);
  r.data_seed = get_u64("data_seed", r.train.seed);

  r.flat = json::object();
  r.flat["preset"] = preset_name;
  const json m = to_json(r.model), t = to_json(r.train);
  for (auto it = m.begin(); it != m.end(); ++it) r.flat[it.key()] = *it;
  for (auto it = t.begin(); it != t.end(); ++it) r.flat[it.key()] = *it;
  r.flat["samples"] = r.samples;
  r.flat["data_seed"] = r.data_seed;
  return r;
}

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

json RunManifest::to_json() const {
  return {{"command", command}, {"config", config}, {"seed", seed}, {"input_hash", input_hash}, {"outputs", outputs}};
}

std::string hash_inputs(const json& config, const std::vector<fs::path>& files) {
  std::string listing = "config " + git_blob_hash(config.dump()) + "\n";
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read input " + f.string());
    std::ostringstream bytes;
    bytes << in.rdbuf();
    listing += f.filename().string() + " " + git_blob_hash(bytes.str()) + "\n";
  }
  return git_blob_hash(listing);
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  fs::create_directories(dir);
  std::ofstream f(dir / "run_manifest.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "run_manifest.json").string());
  f << m.to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options shared by commands that build a model and a training setup.
struct ConfigOptions {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  CLI::Option* seed_opt = nullptr;
  std::uint64_t seed = 0;
  CLI::Option* steps_opt = nullptr;
  std::size_t steps = 0;
  CLI::Option* batch_opt = nullptr;
  std::size_t batch = 0;
  CLI::Option* samples_opt = nullptr;
  std::size_t samples = 0;

  void add_to(CLI::App* app, bool with_training) {
    app->add_option("--config", config_path, "Flat JSON config (or a run_manifest.json to re-run)");
    app->add_option("--preset", preset, "Base model: tiny, tiny-degenerate, Base, S, M, L");
    app->add_option("--set", sets, "Override one config key, KEY=VALUE (repeatable)");
    seed_opt = app->add_option("--seed", seed, "Seed for every stochastic choice (default 0)");
    samples_opt = app->add_option("--samples", samples, "Synthetic sample count (default 256)");
    if (with_training) {
      steps_opt = app->add_option("--steps", steps, "Optimizer steps (default 2000)");
      batch_opt = app->add_option("--batch-size", batch, "Batch size (default 32)");
    }
  }

  bool given() const { return !config_path.empty() || !preset.empty(); }

  ResolvedConfig resolve() const {
    json flat = config_path.empty() ? json::object() : read_json_file(config_path);
    if (flat.contains("command") && flat.contains("config")) flat = flat.at("config");
    if (!preset.empty()) flat["preset"] = preset;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
      const std::string key = s.substr(0, eq), value = s.substr(eq + 1);
      json v;
      try {
        v = json::parse(value);
      } catch (const json::parse_error&) {
        v = value;  // bare strings such as conv_mode=rowcol
      }
      flat[key] = v;
    }
    if (seed_opt && seed_opt->count()) flat["seed"] = seed;
    if (samples_opt && samples_opt->count()) flat["samples"] = samples;
    if (steps_opt && steps_opt->count()) flat["steps"] = steps;
    if (batch_opt && batch_opt->count()) flat["batch_size"] = batch;
    return resolve_config(flat);
  }
};

LabeledImages synthetic_for(const ModelConfig& m, std::size_t count, std::uint64_t seed) {
  SyntheticShapes s;
  s.classes = m.num_classes;
  s.count = count;
  s.img_size = m.img_size;
  s.channels = m.in_channels;
  s.seed = seed;
  return s.generate();
}

void print_warning(const ModelConfig& cfg, std::ostream& err) {
  const ShareSchedule s = share_schedule(cfg);
  if (s.warning) err << "warning: " << *s.warning << '\n';
}

std::vector<fs::path> checkpoint_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

// ---- train ----

struct TrainCmd {
  ConfigOptions cfg;
  std::string out_dir = "runs/train";
  bool dry_run = false;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("train", "Train on the synthetic shapes task; writes history.csv and checkpoint/");
    cfg.add_to(app, true);
    app->add_option("--out", out_dir, "Run directory")->capture_default_str();
    app->add_flag("--dry-run", dry_run, "Print parameter and MAC counts, then exit");
  }

  int exec(std::ostream& out, std::ostream& err) {
    if (!cfg.given()) throw UsageError("train: missing config; pass --config FILE or --preset NAME");
    const ResolvedConfig rc = cfg.resolve();
    print_warning(rc.model, err);
    if (dry_run) {
      const FlopBreakdown f = count_flops(rc.model);
      const std::size_t params = count_params(rc.model);
      json j{{"command", "train"},
             {"dry_run", true},
             {"preset", rc.flat["preset"]},
             {"params", params},
             {"params_millions", std::round(params / 1e4) / 100.0},
             {"refiner_overhead", refiner_overhead(rc.model)},
             {"macs", f.total()},
             {"macs_with_sharing", f.total_with_sharing()}};
      out << j.dump(2) << '\n';
      return kExitOk;
    }
    const LabeledImages data = synthetic_for(rc.model, rc.samples, rc.data_seed);
    TrainOptions opts;
    opts.out_dir = out_dir;
    opts.on_epoch = [&err](const EpochRecord& r) {
      err << "epoch " << r.epoch << " step " << r.step << " lr " << format_number(r.lr) << " loss "
          << format_number(r.train_loss) << " acc " << format_number(r.train_acc) << '\n';
    };
    const TrainResult<float> res = train<float>(rc.model, rc.train, data, opts);
    RunManifest m;
    m.command = "train";
    m.config = rc.flat;
    m.seed = rc.train.seed;
    m.input_hash = hash_inputs(rc.flat, {});
    m.outputs = {(fs::path(out_dir) / "history.csv").string(), (fs::path(out_dir) / "checkpoint").string()};
    write_manifest(out_dir, m);
    json j{{"command", "train"},
           {"out", out_dir},
           {"params", res.parameter_count},
           {"steps", res.step_loss.size()},
           {"final_train_acc", res.final_train_acc},
           {"final_loss", res.history.empty() ? 0.0 : res.history.back().train_loss},
           {"steps_to_target", res.steps_to_target ? json(*res.steps_to_target) : json(nullptr)}};
    out << j.dump(2) << '\n';
    return kExitOk;
  }
};

// ---- eval ----

struct EvalCmd {
  std::string checkpoint;
  std::string images;
  bool synthetic = false;
  std::size_t samples = 256;
  std::uint64_t seed = 1;
  double ratio = 1.0;
  std::size_t test_size = 0;
  std::vector<double> mean, stddev;
  std::string out_dir;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("eval", "Evaluate a checkpoint; prints metrics JSON");
    app->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    app->add_option("--images", images, "Directory of P6 .ppm files named <label>_<anything>.ppm");
    app->add_flag("--synthetic", synthetic, "Evaluate on a generated synthetic split instead of --images");
    app->add_option("--samples", samples, "Synthetic split size")->capture_default_str();
    app->add_option("--seed", seed, "Synthetic split seed (training uses its own data seed)")->capture_default_str();
    app->add_option("--rfc-ratio", ratio,
                    "Crop ratio: <= 1 resizes to round(S/ratio) and center-crops S; > 1 shrinks the image to "
                    "round(S/ratio) pixels and zero-pads to S (round to nearest)")
        ->capture_default_str();
    app->add_option("--test-size", test_size, "Evaluation resolution S (default: the model's img_size)");
    app->add_option("--mean", mean, "Per-channel normalization mean (default 0)");
    app->add_option("--std", stddev, "Per-channel normalization std (default 1)");
    app->add_option("--out", out_dir, "Optional run directory for metrics.json and run_manifest.json");
  }

  int exec(std::ostream& out, std::ostream&) {
    if (synthetic == !images.empty()) throw UsageError("eval: pass exactly one of --images DIR or --synthetic");
    Checkpoint<float> ck = load_checkpoint<float>(checkpoint);
    ModelConfig cfg = ck.config;
    Parameters<float> params = std::move(ck.params);

    EvalPipelineConfig pipe;
    pipe.test_size = test_size ? test_size : cfg.img_size;
    pipe.ratio = ratio;
    if (!mean.empty()) pipe.mean = mean;
    if (!stddev.empty()) pipe.std = stddev;
    pipe.mean.resize(cfg.in_channels, pipe.mean.empty() ? 0.0 : pipe.mean.back());
    pipe.std.resize(cfg.in_channels, pipe.std.empty() ? 1.0 : pipe.std.back());
    pipe.validate(cfg.in_channels);

    if (pipe.test_size != cfg.img_size) {
      ModelConfig resized = cfg;
      resized.img_size = pipe.test_size;
      resized.validate();
      params["pos_embed"] = interpolate_pos_embed(params["pos_embed"], cfg.patches(), resized.patches(),
                                                  cfg.prefix_tokens());
      cfg = resized;
    }

    LabeledImages data;
    std::vector<fs::path> inputs = checkpoint_files(checkpoint);
    if (synthetic) {
      data = synthetic_for(ck.config, samples, seed);
    } else {
      data.classes = cfg.num_classes;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (files.empty()) throw ConfigError("no .ppm files in " + images);
      for (const auto& f : files) {
        const std::string stem = f.stem().string();
        const auto us = stem.find('_');
        std::size_t label = 0, used = 0;
        try {
          label = std::stoul(stem.substr(0, us), &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (us == std::string::npos || used != us) {
          throw ConfigError("image name " + f.filename().string() + " lacks a <label>_ prefix");
        }
        if (label >= cfg.num_classes) throw ConfigError("label " + std::to_string(label) + " out of range in " + f.string());
        data.images.push_back(read_ppm(f));
        data.labels.push_back(label);
        inputs.push_back(f);
      }
    }
    for (auto& img : data.images) {
      if (img.dim(0) != cfg.in_channels) {
        throw ConfigError("image has " + std::to_string(img.dim(0)) + " channels, model expects " +
                          std::to_string(cfg.in_channels));
      }
      img = eval_preprocess(img, pipe);
    }

    const EvalResult r = evaluate(params, cfg, data);
    json metrics{{"command", "eval"},
                 {"accuracy", r.accuracy},
                 {"mean_loss", r.mean_loss},
                 {"correct", r.correct},
                 {"total", r.total},
                 {"rfc_ratio", ratio},
                 {"test_size", pipe.test_size}};
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "metrics.json") << metrics.dump(2) << '\n';
      RunManifest m;
      m.command = "eval";
      m.config = {{"checkpoint", checkpoint}, {"images", images},       {"synthetic", synthetic},
                  {"samples", samples},       {"seed", seed},           {"rfc_ratio", ratio},
                  {"test_size", pipe.test_size}, {"mean", pipe.mean}, {"std", pipe.std},
                  {"model", to_json(ck.config)}};
      m.seed = seed;
      m.input_hash = hash_inputs(m.config, inputs);
      m.outputs = {(fs::path(out_dir) / "metrics.json").string()};
      write_manifest(out_dir, m);
    }
    out << metrics.dump(2) << '\n';
    return kExitOk;
  }
};

// ---- gradcheck ----

struct GradcheckCmd {
  std::string scope = "op";
  double tol = 1e-4;
  ConfigOptions cfg;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("gradcheck", "Central-difference gradient verification (f64, h = 1e-5)");
    app->add_option("--scope", scope, "op: every primitive, 5 shapes each; block: refiner blocks; model: whole model")
        ->check(CLI::IsMember({"op", "block", "model"}))
        ->capture_default_str();
    app->add_option("--tol", tol, "Maximum relative error")->capture_default_str();
    cfg.add_to(app, false);
  }

  int exec(std::ostream& out, std::ostream& err) {
    const std::uint64_t seed = cfg.seed_opt->count() ? cfg.seed : 0;
    struct Row {
      std::string what;
      GradCheckReport report;
    };
    std::vector<Row> rows;
    if (scope == "op") {
      Rng rng(seed);
      for (const auto& c : primitive_grad_cases())
        for (int s = 0; s < 5; ++s) rows.push_back({c.op + " shape#" + std::to_string(s), grad_check(c.fn, c.make(rng))});
    } else if (scope == "block") {
      std::uint64_t s = seed;
      for (const ModelConfig& c : block_check_configs()) rows.push_back({"block " + describe(c), check_block_gradients(c, s++)});
    } else {
      ModelConfig m = tiny_model_config();
      if (cfg.given()) m = cfg.resolve().model;
      print_warning(m, err);
      rows.push_back({"model " + describe(m), check_model_gradients(m, seed)});
    }

    std::size_t passed = 0;
    const Row* worst = nullptr;
    for (const auto& r : rows) {
      const bool ok = r.report.passed(tol);
      passed += ok;
      out << (ok ? "ok   " : "FAIL ") << r.what << " max_rel_err " << format_number(r.report.max_rel_error()) << '\n';
      if (!worst || r.report.max_rel_error() > worst->report.max_rel_error()) worst = &r;
    }
    out << (passed == rows.size() ? "PASS " : "FAIL ") << passed << "/" << rows.size() << " within "
        << format_number(tol) << '\n';
    if (passed != rows.size() && worst) {
      const std::size_t in = worst->report.worst_input();
      const InputGradReport& w = worst->report.inputs[in];
      out << "worst: " << worst->what << " input " << in << " index " << w.worst_index << " analytic "
          << format_number(w.analytic) << " numeric " << format_number(w.numeric) << '\n';
      return kExitFailure;
    }
    return kExitOk;
  }
};

// ---- analyze ----

struct AnalyzeCmd {
  std::string mode;
  std::string checkpoint;
  std::string out_dir = "runs/analyze";
  std::size_t batch = 32;
  std::size_t runs = 10;
  std::size_t images = 4;
  std::string axis;
  std::string values;
  ConfigOptions cfg;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("analyze", "Feature evolution (CKA), head diversity, or an ablation grid");
    app->add_option("--mode", mode, "cka, diversity or ablation")
        ->required()
        ->check(CLI::IsMember({"cka", "diversity", "ablation"}));
    app->add_option("--checkpoint", checkpoint, "Checkpoint to analyze (default: a fresh model from the config)");
    app->add_option("--out", out_dir, "Output directory")->capture_default_str();
    app->add_option("--batch", batch, "cka: images per run")->capture_default_str();
    app->add_option("--runs", runs, "cka: runs averaged")->capture_default_str();
    app->add_option("--images", images, "diversity: images averaged")->capture_default_str();
    app->add_option("--axis", axis, "ablation: expansion_ratio, kernel_size, conv_mode, reduction, share_next, heads");
    app->add_option("--values", values, "ablation: comma-separated values, e.g. 1,2,3");
    cfg.add_to(app, true);
  }

  int exec(std::ostream& out, std::ostream& err) {
    const ResolvedConfig rc = cfg.resolve();
    ModelConfig model = rc.model;
    Parameters<float> params;
    std::vector<fs::path> inputs;
    if (!checkpoint.empty()) {
      Checkpoint<float> ck = load_checkpoint<float>(checkpoint);
      model = ck.config;
      params = std::move(ck.params);
      inputs = checkpoint_files(checkpoint);
    } else if (mode != "ablation") {
      Rng rng(rc.train.seed);
      params = init_model<float>(model, rng);
    }
    print_warning(model, err);

    json config = rc.flat;
    config["mode"] = mode;
    if (!checkpoint.empty()) config["checkpoint"] = checkpoint;
    json summary{{"command", "analyze"}, {"mode", mode}};
    std::vector<std::string> outputs;
    fs::create_directories(out_dir);

    if (mode == "cka") {
      config["batch"] = batch;
      config["runs"] = runs;
      const LabeledImages data = synthetic_for(model, rc.samples, rc.data_seed);
      const EvolutionReport rep = feature_evolution(model, params, data, batch, runs, rc.train.seed);
      const fs::path p = fs::path(out_dir) / "evolution.csv";
      write_evolution_csv(p, rep);
      outputs.push_back(p.string());
      summary["scores"] = rep.scores;
      summary["cka_in_out"] = rep.cka_in_out;
    } else if (mode == "diversity") {
      config["images"] = images;
      const LabeledImages data = synthetic_for(model, images, rc.data_seed);
      const fs::path maps = fs::path(out_dir) / "maps";
      const auto rows = diversity_report(model, params, data, maps);
      const fs::path p = fs::path(out_dir) / "diversity.csv";
      write_diversity_csv(p, rows);
      outputs.push_back(p.string());
      outputs.push_back(maps.string());
      summary["rows"] = rows.size();
    } else {
      if (axis.empty() || values.empty()) throw UsageError("analyze --mode ablation needs --axis and --values");
      std::vector<std::string> vals;
      std::stringstream ss(values);
      for (std::string v; std::getline(ss, v, ',');)
        if (!v.empty()) vals.push_back(v);
      config["axis"] = axis;
      config["values"] = vals;
      const LabeledImages data = synthetic_for(model, rc.samples, rc.data_seed);
      const AblationResult res = ablation_grid(axis, vals, model, rc.train, data);
      for (const auto& w : res.warnings) err << "warning: " << w << '\n';
      const fs::path p = write_ablation_csv(out_dir, res);
      outputs.push_back(p.string());
      summary["rows"] = res.rows.size();
    }

    RunManifest m;
    m.command = "analyze";
    m.config = config;
    m.seed = rc.train.seed;
    m.input_hash = hash_inputs(config, inputs);
    m.outputs = outputs;
    write_manifest(out_dir, m);
    summary["outputs"] = outputs;
    out << summary.dump(2) << '\n';
    return kExitOk;
  }
};

// ---- presets ----

struct PresetsCmd {
  bool as_json = false;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("presets", "List model presets with parameter and MAC counts at 224");
    app->add_flag("--json", as_json, "Machine-readable output");
  }

  int exec(std::ostream& out, std::ostream&) {
    json all = json::array();
    for (const auto& name : preset_names()) {
      const ModelConfig c = preset(name);
      const FlopBreakdown f = count_flops(c);
      all.push_back({{"name", name},
                     {"depth", c.depth},
                     {"dim", c.dim},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"params", count_params(c)},
                     {"refiner_overhead", refiner_overhead(c)},
                     {"macs", f.total()},
                     {"macs_with_sharing", f.total_with_sharing()}});
    }
    if (as_json) {
      out << all.dump(2) << '\n';
      return kExitOk;
    }
    out << "preset depth dim heads mlp params refiner_overhead gmacs gmacs_shared\n";
    for (const auto& p : all) {
      out << p["name"].get<std::string>() << ' ' << p["depth"] << ' ' << p["dim"] << ' ' << p["heads"] << ' '
          << p["mlp_ratio"] << ' ' << p["params"] << ' ' << p["refiner_overhead"] << ' '
          << format_number(std::round(p["macs"].get<double>() / 1e7) / 100.0) << ' '
          << format_number(std::round(p["macs_with_sharing"].get<double>() / 1e7) / 100.0) << '\n';
    }
    return kExitOk;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Refiner attention ViT: training, evaluation, analysis and verification", "refiner"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 runtime failure, 2 usage or config error. REFINER_THREADS caps worker threads.");
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  GradcheckCmd grad_cmd;
  AnalyzeCmd analyze_cmd;
  PresetsCmd presets_cmd;
  train_cmd.add(app);
  eval_cmd.add(app);
  grad_cmd.add(app);
  analyze_cmd.add(app);
  presets_cmd.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* used = app.get_subcommands().front();
  try {
    if (used == train_cmd.app) return train_cmd.exec(out, err);
    if (used == eval_cmd.app) return eval_cmd.exec(out, err);
    if (used == grad_cmd.app) return grad_cmd.exec(out, err);
    if (used == analyze_cmd.app) return analyze_cmd.exec(out, err);
    return presets_cmd.exec(out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << used->help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace refiner::cli
