#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tinysound/audio_io.hpp"
#include "tinysound/augment.hpp"
#include "tinysound/checkpoint.hpp"
#include "tinysound/config.hpp"
#include "tinysound/model.hpp"
#include "tinysound/pipeline.hpp"

namespace tinysound {

struct TrainConfig {
  double lr_peak = 1e-4;
  std::uint64_t warmup_steps = 10'000;
  std::size_t batch_size = 64;
  int epochs = 100;
  std::uint64_t seed = 0;
  std::vector<augment::AugmentSpec> augment;
  /// Held-out fold when every manifest entry carries one.
  int val_fold = 5;
  /// Stratified hold-out fraction otherwise.
  double val_fraction = 0.2;
  unsigned workers = 0;  // 0: hardware concurrency
  /// Decoded clips are kept in memory when the dataset fits in this many samples.
  std::size_t cache_limit_samples = 64u << 20;
  std::string metrics_path;
  std::string best_checkpoint_path;
  std::string last_checkpoint_path;
  bool log = true;
  /// Called with the manifest indices of every training batch.
  std::function<void(std::span<const std::size_t>)> on_batch;

  void validate() const;
  static TrainConfig from_config(const KeyValueConfig& cfg);
};

/// Reads `augment.<kind> = true|false` and `augment.<kind>.p`; order is fixed.
std::vector<augment::AugmentSpec> augment_specs_from(const KeyValueConfig& cfg);

struct LossResult {
  double loss = 0.0;
  MatrixRM dlogits;
};

/// Mean negative log-likelihood of softmax(logits); gradient (softmax - onehot) / B.
LossResult cross_entropy(const MatrixRM& logits, std::span<const int> labels);

/// lr_peak * min(1, step / warmup_steps), constant afterwards.
double lr_at(std::uint64_t step, double lr_peak, std::uint64_t warmup_steps);
inline double lr_at(std::uint64_t step, const TrainConfig& cfg) {
  return lr_at(step, cfg.lr_peak, cfg.warmup_steps);
}

/// Bias-corrected Adam; increments opt.step.
void adam_step(ModelParams& params, const Gradients& grads, OptState& opt, double lr);

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
DataSplit split_manifest(const DatasetManifest& manifest, const TrainConfig& cfg);

/// Decoded 44.1 kHz clips for a manifest, cached when small enough.
class ClipSource {
 public:
  ClipSource(const DatasetManifest& manifest, std::size_t cache_limit_samples);
  AudioClip get(std::size_t index) const;
  const DatasetManifest& manifest() const { return manifest_; }

 private:
  const DatasetManifest& manifest_;
  std::vector<AudioClip> cache_;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  double best_val_acc = -1.0;
  std::vector<EpochMetrics> history;
  DataSplit split;
};

/// Trains from `start` (resuming its optimizer state and epoch counter when
/// present) or from a fresh seeded initialization.
TrainResult train_loop(const DatasetManifest& manifest, const ModelConfig& model_cfg,
                       const FeaturePipeline& pipeline, const TrainConfig& cfg,
                       const Checkpoint* start = nullptr);

/// Top-1 accuracy on centered windows, eval mode.
double evaluate(const ModelParams& params, const ClipSource& clips,
                std::span<const std::size_t> entries, const FeaturePipeline& pipeline,
                std::size_t batch_size = 32, unsigned workers = 0);

/// Re-initializes the classifier for the manifest's classes, keeps every other
/// weight, then trains without freezing anything.
TrainResult finetune(const Checkpoint& base, const DatasetManifest& manifest,
                     const FeaturePipeline& pipeline, const TrainConfig& cfg);

std::string metrics_csv(std::span<const EpochMetrics> history);

/// Metadata stored with checkpoints so predict/eval can rebuild the pipeline.
void describe_checkpoint(Checkpoint& ck, const FeaturePipeline& pipeline,
                         const std::vector<std::string>& class_names);

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

}  // namespace tinysound
