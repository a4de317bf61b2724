#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tinysound/audio_io.hpp"
#include "tinysound/config.hpp"
#include "tinysound/dsp.hpp"
#include "tinysound/model.hpp"
#include "tinysound/tokenizer.hpp"

namespace tinysound {

enum class FeatureSource { mel, mfcc, reshape, curve_tokens };

const char* to_string(FeatureSource s);

/// Window -> model input. Shared by training, evaluation, prediction and
/// benchmarking so every path sees identical features.
struct FeaturePipeline {
  FeatureSource source = FeatureSource::mel;
  SpectrogramConfig spectrogram;
  int n_mfcc = 128;
  int downsample = 1;
  bool normalize = false;
  std::size_t reshape_rows = 256;
  std::size_t reshape_cols = 172;
  std::string vocab_path;
  std::shared_ptr<const CurveVocab> vocab;
  std::size_t window_samples = 220'500;

  void validate() const;
  InputMode input_mode() const;
  int seq_len() const;
  int input_dim() const;

  FeatureMatrix features(const AudioClip& window) const;
  std::vector<std::int32_t> tokens(const AudioClip& window) const;

  /// Reads `features.*` and `train.window_samples`; loads the vocabulary for
  /// curve tokens.
  static FeaturePipeline from_config(const KeyValueConfig& cfg);
  void to_config(KeyValueConfig& cfg) const;
};

/// One model input ready for batching.
struct Example {
  FeatureMatrix features;
  std::vector<std::int32_t> tokens;
  int label = 0;
};

Example make_example(const FeaturePipeline& p, const AudioClip& window, int label);
Batch make_batch(const FeaturePipeline& p, std::span<const Example> examples);

/// Architecture keys (`model.*`) combined with the pipeline's input geometry.
ModelConfig model_config_from(const KeyValueConfig& cfg, const FeaturePipeline& p, int classes);
void model_config_to(KeyValueConfig& cfg, const ModelConfig& m);

}  // namespace tinysound
