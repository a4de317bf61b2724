#include "tinysound/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <thread>

namespace tinysound {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(lr_peak >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must be in (0, 1)");
  for (const auto& a : augment)
    if (a.probability < 0.0 || a.probability > 1.0) throw ConfigError("augment probabilities must be in [0, 1]");
}

std::vector<augment::AugmentSpec> augment_specs_from(const KeyValueConfig& cfg) {
  std::vector<augment::AugmentSpec> specs;
  const bool all = cfg.get_bool("augment.enabled", false);
  const double default_p = cfg.get_double("augment.probability", 0.3);
  for (auto kind : augment::kAllKinds) {
    const std::string key = std::string("augment.") + augment::to_string(kind);
    if (!cfg.get_bool(key, all)) continue;
    specs.push_back({kind, cfg.get_double(key + ".p", default_p), std::nullopt});
  }
  return specs;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  TrainConfig t;
  t.lr_peak = cfg.get_double("train.lr", t.lr_peak);
  t.warmup_steps = static_cast<std::uint64_t>(cfg.get_int("train.warmup_steps", static_cast<long long>(t.warmup_steps)));
  t.batch_size = static_cast<std::size_t>(cfg.get_int("train.batch_size", static_cast<long long>(t.batch_size)));
  t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
  t.val_fold = static_cast<int>(cfg.get_int("train.val_fold", t.val_fold));
  t.val_fraction = cfg.get_double("train.val_fraction", t.val_fraction);
  t.workers = static_cast<unsigned>(cfg.get_int("train.workers", 0));
  t.metrics_path = cfg.get_string("train.metrics", "");
  t.augment = augment_specs_from(cfg);
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------

LossResult cross_entropy(const MatrixRM& logits, std::span<const int> labels) {
  const auto B = logits.rows();
  const auto C = logits.cols();
  if (static_cast<std::size_t>(B) != labels.size())
    throw ConfigError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(B) + " rows");
  LossResult r;
  r.dlogits.resize(B, C);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= C)
      throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
    const double mx = logits.row(b).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < C; ++c) sum += std::exp(logits(b, c) - mx);
    const double log_z = mx + std::log(sum);
    r.loss += log_z - logits(b, y);
    for (Eigen::Index c = 0; c < C; ++c)
      r.dlogits(b, c) = (std::exp(logits(b, c) - log_z) - (c == y ? 1.0 : 0.0)) / static_cast<double>(B);
  }
  r.loss /= static_cast<double>(B);
  return r;
}

double lr_at(std::uint64_t step, double lr_peak, std::uint64_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return lr_peak;
  return lr_peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

void adam_step(ModelParams& params, const Gradients& grads, OptState& opt, double lr) {
  auto& tensors = params.tensors();
  if (grads.values.size() != tensors.size() || opt.m.size() != tensors.size())
    throw ConfigError("adam_step: gradient/optimizer state does not match parameters");
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& tensor = tensors[i];
    if (!tensor.learnable) continue;
    const auto& g = grads.values[i];
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    for (std::size_t j = 0; j < tensor.data.size(); ++j) {
      const double mj = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      const double vj = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + opt.eps);
      tensor.data[j] = static_cast<float>(tensor.data[j] - update);
    }
  }
}

// ---------------------------------------------------------------------------

DataSplit split_manifest(const DatasetManifest& manifest, const TrainConfig& cfg) {
  DataSplit s;
  const auto& entries = manifest.entries;
  const bool fold_split =
      manifest.has_folds() &&
      std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.fold == cfg.val_fold; });
  if (fold_split) {
    for (std::size_t i = 0; i < entries.size(); ++i)
      (entries[i].fold == cfg.val_fold ? s.val : s.train).push_back(i);
    return s;
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < entries.size(); ++i) by_class[entries[i].class_index].push_back(i);
  Rng rng(derive_seed(cfg.seed, 0x5b1175));
  for (auto& [cls, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    s.val.insert(s.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

ClipSource::ClipSource(const DatasetManifest& manifest, std::size_t cache_limit_samples)
    : manifest_(manifest) {
  std::uintmax_t bytes = 0;
  for (const auto& e : manifest.entries) {
    std::error_code ec;
    bytes += std::filesystem::file_size(e.path, ec);
  }
  // PCM16 files hold two bytes per sample; float files overestimate, which is fine.
  if (bytes / 2 <= cache_limit_samples) {
    cache_.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) cache_.push_back(load_clip(e));
  }
}

AudioClip ClipSource::get(std::size_t index) const {
  if (!cache_.empty()) return cache_[index];
  return load_clip(manifest_.entries[index]);
}

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double evaluate(const ModelParams& params, const ClipSource& clips, std::span<const std::size_t> entries,
                const FeaturePipeline& pipeline, std::size_t batch_size, unsigned workers) {
  if (entries.empty()) return 0.0;
  std::size_t correct = 0;
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < entries.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, entries.size() - start);
    std::vector<Example> examples(n);
    parallel_for(n, workers, [&](std::size_t i) {
      const auto idx = entries[start + i];
      const AudioClip clip = clips.get(idx);
      examples[i] = make_example(pipeline, center_slice(clip, pipeline.window_samples),
                                 clips.manifest().entries[idx].class_index);
    });
    const MatrixRM logits = predict_logits(params, make_batch(pipeline, examples));
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      if (arg == examples[i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(entries.size());
}

std::string metrics_csv(std::span<const EpochMetrics> history) {
  std::string out = "epoch,train_loss,val_acc\n";
  char buf[96];
  for (const auto& m : history) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", m.epoch, m.train_loss, m.val_acc);
    out += buf;
  }
  return out;
}

void describe_checkpoint(Checkpoint& ck, const FeaturePipeline& pipeline,
                         const std::vector<std::string>& class_names) {
  KeyValueConfig kv;
  pipeline.to_config(kv);
  ck.metadata["pipeline"] = kv.to_string();
  std::string names;
  for (std::size_t i = 0; i < class_names.size(); ++i) names += (i ? "\n" : "") + class_names[i];
  ck.metadata["class_names"] = names;
}

TrainResult train_loop(const DatasetManifest& manifest, const ModelConfig& model_cfg,
                       const FeaturePipeline& pipeline, const TrainConfig& cfg, const Checkpoint* start) {
  cfg.validate();
  model_cfg.validate();
  pipeline.validate();
  if (model_cfg.seq_len != pipeline.seq_len() || model_cfg.input_dim != pipeline.input_dim())
    throw ConfigError("train: model input geometry (L=" + std::to_string(model_cfg.seq_len) + ", F=" +
                      std::to_string(model_cfg.input_dim) + ") does not match the feature pipeline (L=" +
                      std::to_string(pipeline.seq_len()) + ", F=" + std::to_string(pipeline.input_dim()) + ")");
  if (static_cast<std::size_t>(model_cfg.classes) < manifest.class_names.size())
    throw ConfigError("train: model has fewer classes than the manifest");

  TrainResult result;
  result.split = split_manifest(manifest, cfg);
  const auto& split = result.split;
  if (split.train.empty()) throw ConfigError("train: empty training split");
  if (split.val.empty()) throw ConfigError("train: empty validation split");

  ModelParams params;
  OptState opt;
  std::uint32_t first_epoch = 0;
  if (start != nullptr) {
    if (!(start->params.config() == model_cfg))
      throw ConfigError("train: starting checkpoint config differs from the model config");
    params = start->params;
    opt = start->opt ? *start->opt : OptState::zeros_like(params);
    first_epoch = start->opt ? start->epoch : 0;
  } else {
    Rng init_rng(derive_seed(cfg.seed, 0x1417));
    params = init_model(model_cfg, init_rng);
    opt = OptState::zeros_like(params);
  }

  const ClipSource clips(manifest, cfg.cache_limit_samples);
  auto snapshot = [&](std::uint32_t epoch) {
    Checkpoint ck{params, opt, opt.step, epoch, {}};
    describe_checkpoint(ck, pipeline, manifest.class_names);
    return ck;
  };
  result.last = snapshot(first_epoch);
  result.best = result.last;

  for (int epoch = static_cast<int>(first_epoch); epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    Rng shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x5u));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b0);
      const std::span<const std::size_t> ids(order.data() + b0, n);
      if (cfg.on_batch) cfg.on_batch(ids);

      std::vector<Example> examples(n);
      parallel_for(n, cfg.workers, [&](std::size_t i) {
        const auto idx = ids[i];
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, idx));
        AudioClip window = random_slice(clips.get(idx), pipeline.window_samples, rng);
        if (!cfg.augment.empty()) window.samples = augment::apply_pipeline(window.samples, cfg.augment, rng);
        examples[i] = make_example(pipeline, window, manifest.entries[idx].class_index);
      });
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = examples[i].label;

      const ForwardOptions fo{true, true, derive_seed(cfg.seed, opt.step, 0xd0)};
      const auto fwd = forward(params, make_batch(pipeline, examples), fo);
      const auto loss = cross_entropy(fwd.logits, labels);
      const Gradients grads = backward(params, *fwd.trace, loss.dlogits);
      update_running_stats(params, *fwd.trace);
      adam_step(params, grads, opt, lr_at(opt.step, cfg));
      loss_sum += loss.loss * static_cast<double>(n);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.val_acc = evaluate(params, clips, split.val, pipeline, cfg.batch_size, cfg.workers);
    result.history.push_back(m);
    if (cfg.log)
      std::cerr << "epoch " << m.epoch << "/" << cfg.epochs << "  train_loss " << m.train_loss
                << "  val_acc " << m.val_acc << "  step " << opt.step << "\n";

    result.last = snapshot(static_cast<std::uint32_t>(epoch + 1));
    if (m.val_acc > result.best_val_acc) {
      result.best_val_acc = m.val_acc;
      result.best = result.last;
      result.best.metadata["best_val_acc"] = std::to_string(m.val_acc);
      if (!cfg.best_checkpoint_path.empty()) save_checkpoint(cfg.best_checkpoint_path, result.best);
    }
    if (!cfg.last_checkpoint_path.empty()) save_checkpoint(cfg.last_checkpoint_path, result.last);
    if (!cfg.metrics_path.empty()) {
      const auto csv = metrics_csv(result.history);
      write_file_bytes(cfg.metrics_path, {csv.begin(), csv.end()});
    }
  }
  return result;
}

TrainResult finetune(const Checkpoint& base, const DatasetManifest& manifest, const FeaturePipeline& pipeline,
                     const TrainConfig& cfg) {
  const ModelConfig& old_cfg = base.params.config();
  if (old_cfg.input_mode != pipeline.input_mode() || old_cfg.seq_len != pipeline.seq_len() ||
      old_cfg.input_dim != pipeline.input_dim())
    throw ConfigError("finetune: feature pipeline geometry differs from the base model");
  ModelConfig new_cfg = old_cfg;
  new_cfg.classes = static_cast<int>(manifest.class_names.size());
  if (new_cfg.classes < 1) throw ConfigError("finetune: manifest has no classes");

  Rng rng(derive_seed(cfg.seed, 0xf17e));
  ModelParams fresh = init_model(new_cfg, rng);
  const auto& s = fresh.slots();
  for (std::size_t i = 0; i < fresh.tensors().size(); ++i) {
    if (i == s.cls_w || i == s.cls_b) continue;
    fresh.at(i).data = base.params.at(i).data;
  }
  Checkpoint start{std::move(fresh), std::nullopt, 0, 0, {}};
  return train_loop(manifest, new_cfg, pipeline, cfg, &start);
}

}  // namespace tinysound
