// tinysound: command-line front end.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "tinysound/audio_io.hpp"
#include "tinysound/augment.hpp"
#include "tinysound/config.hpp"
#include "tinysound/deploy.hpp"
#include "tinysound/pipeline.hpp"
#include "tinysound/sweep.hpp"
#include "tinysound/tokenizer.hpp"
#include "tinysound/train.hpp"

using namespace tinysound;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string layout = "folder";
  std::string input;
  std::string checkpoint;
  std::string resume;
  std::string kind;
  std::optional<double> param;
  std::optional<int> epochs;
  std::optional<std::size_t> budget;
  int runs = 10;
  int warmup = 3;
  bool quantized = false;
  bool quiet = false;
};

KeyValueConfig load_config(const Options& o) {
  auto cfg = o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config);
  if (o.seed) cfg.set("train.seed", std::to_string(*o.seed));
  if (o.epochs) cfg.set("train.epochs", std::to_string(*o.epochs));
  return cfg;
}

std::uint64_t seed_of(const Options& o, const KeyValueConfig& cfg) {
  return o.seed.value_or(static_cast<std::uint64_t>(cfg.get_int("train.seed", 0)));
}

DatasetManifest load_data(const Options& o) {
  if (o.data.empty()) throw ConfigError("--data is required");
  auto m = load_manifest(o.data, parse_layout(o.layout));
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  if (m.entries.empty()) throw ConfigError("no audio files found under " + o.data);
  return m;
}

FeaturePipeline pipeline_of(const Checkpoint& ck) {
  const auto it = ck.metadata.find("pipeline");
  if (it == ck.metadata.end()) throw FormatError("checkpoint has no feature pipeline metadata");
  return FeaturePipeline::from_config(KeyValueConfig::parse(it->second, "checkpoint pipeline"));
}

std::vector<std::string> class_names_of(const std::map<std::string, std::string>& meta, int classes) {
  std::vector<std::string> names;
  if (const auto it = meta.find("class_names"); it != meta.end()) names = split_list(it->second, '\n');
  while (static_cast<int>(names.size()) < classes) names.push_back("class" + std::to_string(names.size()));
  return names;
}

// A model that is either f32 or quantized, with its metadata.
struct LoadedModel {
  std::optional<ModelParams> f32;
  std::optional<QuantizedParams> q;
  std::map<std::string, std::string> metadata;

  const ModelConfig& config() const { return f32 ? f32->config() : q->config(); }
  MatrixRM logits(const Batch& b) const { return f32 ? predict_logits(*f32, b) : qforward(*q, b); }
};

LoadedModel load_model(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  LoadedModel m;
  if (o.quantized) {
    m.q = load_quantized(o.checkpoint, &m.metadata);
  } else {
    auto ck = load_checkpoint(o.checkpoint);
    m.metadata = ck.metadata;
    m.f32 = std::move(ck.params);
  }
  return m;
}

FeaturePipeline pipeline_of(const LoadedModel& m) {
  Checkpoint tmp;
  tmp.metadata = m.metadata;
  return pipeline_of(tmp);
}

TrainConfig train_config(const Options& o, const KeyValueConfig& cfg, const std::string& out_dir) {
  auto t = TrainConfig::from_config(cfg);
  t.seed = seed_of(o, cfg);
  t.log = !o.quiet;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    t.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    t.best_checkpoint_path = (fs::path(out_dir) / "best.tsck").string();
    t.last_checkpoint_path = (fs::path(out_dir) / "last.tsck").string();
  }
  return t;
}

// ---------------------------------------------------------------------------

int cmd_featurize(const Options& o) {
  const auto cfg = load_config(o);
  const auto pipe = FeaturePipeline::from_config(cfg);
  if (o.input.empty() || o.out.empty()) throw ConfigError("featurize needs --in and --out");
  ManifestEntry e;
  e.path = o.input;
  const auto clip = load_clip(e);
  const auto window = clip.samples.size() >= pipe.window_samples ? center_slice(clip, pipe.window_samples)
                                                                 : slice_at(clip, 0, pipe.window_samples);
  if (pipe.input_mode() == InputMode::tokens) {
    std::ofstream f(o.out);
    for (auto id : pipe.tokens(window)) f << id << "\n";
    if (!f) throw std::runtime_error("cannot write " + o.out);
    std::cout << "tokens " << pipe.seq_len() << "\n";
  } else {
    const auto fm = pipe.features(window);
    write_file_bytes(o.out, encode_feature_matrix(fm));
    std::cout << to_string(fm.kind) << " " << fm.rows << "x" << fm.cols << "\n";
  }
  return 0;
}

int cmd_build_vocab(const Options& o) {
  const auto cfg = load_config(o);
  if (o.out.empty()) throw ConfigError("build-vocab needs --out");
  CurveSpec spec;
  spec.curve_len = static_cast<std::uint32_t>(cfg.get_int("tokenizer.curve_len", spec.curve_len));
  spec.resolution = static_cast<std::uint32_t>(cfg.get_int("tokenizer.resolution", spec.resolution));
  spec.top_k = static_cast<std::uint32_t>(cfg.get_int("tokenizer.top_k", spec.top_k));
  const auto mode = cfg.get_string("tokenizer.mode", "absolute");
  if (mode == "relative") spec.mode = CurveMode::relative;
  else if (mode != "absolute") throw ConfigError("tokenizer.mode must be absolute or relative");
  const auto manifest = load_data(o);
  std::vector<AudioClip> corpus;
  for (const auto& e : manifest.entries) corpus.push_back(load_clip(e));
  const auto build = build_curve_vocab(corpus, spec);
  write_file_bytes(o.out, build.vocab.encode());
  std::printf("curves %zu  vocab_size %zu  coverage %.4f  token_coverage %.4f  distinct_coverage %.4f\n",
              build.vocab.curves().size(), build.vocab.vocab_size(), build.stats.vocab_coverage,
              build.stats.token_coverage, build.stats.distinct_coverage);
  return 0;
}

int cmd_augment_preview(const Options& o) {
  if (o.input.empty() || o.out.empty() || o.kind.empty())
    throw ConfigError("augment-preview needs --in, --kind and --out");
  const auto kind = augment::parse_kind(o.kind);
  ManifestEntry e;
  e.path = o.input;
  auto clip = load_clip(e);
  Rng rng(derive_seed(o.seed.value_or(0), 0xa9));
  std::optional<std::pair<double, double>> range;
  if (o.param) range = std::pair{*o.param, *o.param};
  clip.samples = augment::apply_random(kind, clip.samples, rng, range);
  for (auto& v : clip.samples) v = std::clamp(v, -1.0f, 1.0f);
  write_wav(o.out, clip);
  std::cout << "wrote " << o.out << "\n";
  return 0;
}

void report(const TrainResult& r) {
  if (r.history.empty()) return;
  const auto& m = r.history.back();
  std::printf("epochs %d  final train_loss %.4f  val_acc %.4f  best val_acc %.4f\n", m.epoch, m.train_loss, m.val_acc,
              r.best_val_acc);
}

int cmd_train(const Options& o) {
  const auto cfg = load_config(o);
  const auto manifest = load_data(o);
  const auto pipe = FeaturePipeline::from_config(cfg);
  const auto model = model_config_from(cfg, pipe, static_cast<int>(manifest.class_names.size()));
  const auto tc = train_config(o, cfg, o.out.empty() ? "run" : o.out);
  std::optional<Checkpoint> start;
  if (!o.resume.empty()) start = load_checkpoint(o.resume);
  if (!o.quiet)
    std::cerr << "training " << count_params(model) << " parameters on " << manifest.entries.size() << " clips, L="
              << model.seq_len << " F=" << model.input_dim << "\n";
  report(train_loop(manifest, model, pipe, tc, start ? &*start : nullptr));
  return 0;
}

int cmd_finetune(const Options& o) {
  const auto cfg = load_config(o);
  if (o.checkpoint.empty()) throw ConfigError("finetune needs --checkpoint");
  const auto base = load_checkpoint(o.checkpoint);
  const auto manifest = load_data(o);
  const auto pipe = pipeline_of(base);
  const auto tc = train_config(o, cfg, o.out.empty() ? "finetune" : o.out);
  report(finetune(base, manifest, pipe, tc));
  return 0;
}

int cmd_eval(const Options& o) {
  const auto model = load_model(o);
  const auto pipe = pipeline_of(model);
  const auto manifest = load_data(o);
  const ClipSource clips(manifest, 64u << 20);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto ex = make_example(pipe, center_slice(clips.get(i), pipe.window_samples), manifest.entries[i].class_index);
    Eigen::Index arg = 0;
    model.logits(make_batch(pipe, std::span(&ex, 1))).row(0).maxCoeff(&arg);
    correct += arg == ex.label;
  }
  std::printf("accuracy %.4f  (%zu/%zu)\n", static_cast<double>(correct) / static_cast<double>(manifest.entries.size()),
              correct, manifest.entries.size());
  return 0;
}

int cmd_predict(const Options& o) {
  if (o.input.empty()) throw ConfigError("predict needs --in");
  const auto model = load_model(o);
  const auto pipe = pipeline_of(model);
  ManifestEntry e;
  e.path = o.input;
  const auto ex = make_example(pipe, center_slice(load_clip(e), pipe.window_samples), 0);
  const auto logits = model.logits(make_batch(pipe, std::span(&ex, 1)));
  const auto names = class_names_of(model.metadata, model.config().classes);
  const double mx = logits.maxCoeff();
  double z = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(0, c) - mx);
  Eigen::Index best = 0;
  logits.row(0).maxCoeff(&best);
  std::cout << names[static_cast<std::size_t>(best)] << "\n";
  for (Eigen::Index c = 0; c < logits.cols(); ++c)
    std::printf("%s %.6f\n", names[static_cast<std::size_t>(c)].c_str(), std::exp(logits(0, c) - mx) / z);
  return 0;
}

int cmd_count(const Options& o) {
  const auto cfg = load_config(o);
  const auto pipe = FeaturePipeline::from_config(cfg);
  const auto model = model_config_from(cfg, pipe, static_cast<int>(cfg.get_int("model.classes", 6)));
  std::cout << "params " << count_params(model) << "\n";
  std::cout << "mult_adds " << count_mult_adds(model, MacConvention::per_position) << "\n";
  std::cout << "mult_adds_total " << count_mult_adds(model, MacConvention::total) << "\n";
  std::cout << "seq_len " << model.seq_len << "\n";
  return 0;
}

int cmd_quantize(const Options& o) {
  if (o.checkpoint.empty() || o.out.empty()) throw ConfigError("quantize needs --checkpoint and --out");
  const auto ck = load_checkpoint(o.checkpoint);
  const auto q = quantize_dynamic(ck.params);
  save_quantized(o.out, q, ck.metadata);
  std::printf("f32 %zu bytes  int8 %zu bytes  weight payload %zu / %zu\n",
              encode_checkpoint({ck.params, std::nullopt, 0, 0, ck.metadata}).size(), fs::file_size(o.out),
              q.quantized_weight_bytes(), q.f32_weight_bytes());
  return 0;
}

int cmd_bench(const Options& o) {
  BenchReport rep;
  if (!o.checkpoint.empty()) {
    const auto model = load_model(o);
    const auto pipe = pipeline_of(model);
    rep = model.f32 ? bench(*model.f32, pipe, o.runs, o.warmup) : bench(*model.q, pipe, o.runs, o.warmup);
  } else {
    // untrained weights from a config: latency does not depend on the values
    const auto cfg = load_config(o);
    const auto pipe = FeaturePipeline::from_config(cfg);
    const auto mc = model_config_from(cfg, pipe, static_cast<int>(cfg.get_int("model.classes", 6)));
    Rng rng(derive_seed(seed_of(o, cfg), 0xbe));
    const auto params = init_model(mc, rng);
    rep = o.quantized ? bench(quantize_dynamic(params), pipe, o.runs, o.warmup) : bench(params, pipe, o.runs, o.warmup);
  }
  const auto line = rep.to_json();
  std::cout << line << "\n";
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::app);
    f << line << "\n";
    if (!f) throw std::runtime_error("cannot write " + o.out);
  }
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto cfg = load_config(o);
  const auto seed = seed_of(o, cfg);
  const auto points = expand_grid(cfg, o.budget, seed);
  const auto manifest = load_data(o);
  const std::string out = o.out.empty() ? "sweep.csv" : o.out;
  std::string csv = "point";
  for (const auto& [axis, v] : points.front().values) csv += "," + axis;
  csv += ",params,best_val_acc\n";
  for (const auto& p : points) {
    const auto pc = apply_point(cfg, p);
    const auto pipe = FeaturePipeline::from_config(pc);
    const auto model = model_config_from(pc, pipe, static_cast<int>(manifest.class_names.size()));
    auto tc = TrainConfig::from_config(pc);
    tc.seed = seed;
    tc.log = false;
    const auto r = train_loop(manifest, model, pipe, tc);
    std::string row = std::to_string(p.index);
    for (const auto& [axis, v] : p.values) row += "," + v;
    char tail[64];
    std::snprintf(tail, sizeof tail, ",%llu,%.6f\n", static_cast<unsigned long long>(count_params(model)),
                  r.best_val_acc);
    row += tail;
    csv += row;
    if (!o.quiet) std::cerr << row;
  }
  write_file_bytes(out, {csv.begin(), csv.end()});
  std::cout << "wrote " << points.size() << " rows to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tinysound: environmental sound classification with tiny transformers"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Config file (key = value)");
    c->add_option("--seed", o.seed, "Random seed");
    c->add_option("--out", o.out, "Output path");
  };
  auto data = [&](CLI::App* c) {
    c->add_option("--data", o.data, "Dataset root")->required();
    c->add_option("--layout", o.layout, "folder or csv")->check(CLI::IsMember({"folder", "csv"}));
  };
  auto quiet = [&](CLI::App* c) { c->add_flag("--quiet", o.quiet, "Less logging"); };

  auto* featurize = app.add_subcommand("featurize", "Compute model input features for one wav file");
  common(featurize);
  featurize->add_option("--in", o.input, "Input wav")->required();

  auto* vocab = app.add_subcommand("build-vocab", "Build a curve-token vocabulary from a dataset");
  common(vocab);
  data(vocab);

  auto* preview = app.add_subcommand("augment-preview", "Apply one augmentation to a wav file");
  common(preview);
  preview->add_option("--in", o.input, "Input wav")->required();
  preview->add_option("--kind", o.kind, "Augmentation name")->required();
  preview->add_option("--param", o.param, "Fixed parameter instead of a random draw");

  auto* train = app.add_subcommand("train", "Train a model from scratch");
  common(train);
  data(train);
  quiet(train);
  train->add_option("--resume", o.resume, "Checkpoint to resume from");
  train->add_option("--epochs", o.epochs, "Override train.epochs");

  auto* ft = app.add_subcommand("finetune", "Retrain a checkpoint on a new label set");
  common(ft);
  data(ft);
  quiet(ft);
  ft->add_option("--checkpoint", o.checkpoint, "Base checkpoint")->required();
  ft->add_option("--epochs", o.epochs, "Override train.epochs");

  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset");
  data(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  eval->add_flag("--quantized", o.quantized, "Checkpoint is an int8 model");

  auto* predict = app.add_subcommand("predict", "Classify one wav file");
  predict->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  predict->add_option("--in", o.input, "Input wav")->required();
  predict->add_flag("--quantized", o.quantized, "Checkpoint is an int8 model");

  auto* count = app.add_subcommand("count", "Parameter and multiply-add counts for a config");
  common(count);

  auto* quant = app.add_subcommand("quantize", "Convert a checkpoint to int8 weights");
  common(quant);
  quant->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();

  auto* bn = app.add_subcommand("bench", "Latency benchmark, one JSON line per run");
  common(bn);
  bn->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: untrained model from --config)");
  bn->add_flag("--quantized", o.quantized, "Benchmark int8 weights");
  bn->add_option("--runs", o.runs, "Measured runs")->check(CLI::PositiveNumber);
  bn->add_option("--warmup", o.warmup, "Discarded runs")->check(CLI::NonNegativeNumber);

  auto* sweep = app.add_subcommand("sweep", "Train over a hyperparameter grid");
  common(sweep);
  data(sweep);
  quiet(sweep);
  sweep->add_option("--budget", o.budget, "Random subset size")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (*featurize) return cmd_featurize(o);
    if (*vocab) return cmd_build_vocab(o);
    if (*preview) return cmd_augment_preview(o);
    if (*train) return cmd_train(o);
    if (*ft) return cmd_finetune(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o);
    if (*count) return cmd_count(o);
    if (*quant) return cmd_quantize(o);
    if (*bn) return cmd_bench(o);
    if (*sweep) return cmd_sweep(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
