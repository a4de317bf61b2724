#include "tinysound/pipeline.hpp"

#include <algorithm>

namespace tinysound {

const char* to_string(FeatureSource s) {
  switch (s) {
    case FeatureSource::mel: return "mel";
    case FeatureSource::mfcc: return "mfcc";
    case FeatureSource::reshape: return "reshape";
    case FeatureSource::curve_tokens: return "tokens";
  }
  return "?";
}

namespace {
FeatureSource parse_source(const std::string& s) {
  for (auto v : {FeatureSource::mel, FeatureSource::mfcc, FeatureSource::reshape, FeatureSource::curve_tokens})
    if (s == to_string(v)) return v;
  throw ConfigError("features.kind must be mel, mfcc, reshape or tokens (got '" + s + "')");
}
}  // namespace

void FeaturePipeline::validate() const {
  if (window_samples == 0) throw ConfigError("window_samples must be positive");
  if (downsample < 1) throw ConfigError("features.downsample must be >= 1");
  switch (source) {
    case FeatureSource::mel:
      spectrogram.validate();
      break;
    case FeatureSource::mfcc:
      spectrogram.validate();
      if (n_mfcc < 1 || n_mfcc > spectrogram.n_mels) throw ConfigError("features.n_mfcc must be in [1, n_mels]");
      break;
    case FeatureSource::reshape:
      if (reshape_rows * reshape_cols > window_samples)
        throw ConfigError("reshape needs rows*cols <= window_samples");
      break;
    case FeatureSource::curve_tokens:
      if (!vocab) throw ConfigError("curve tokens need a vocabulary (features.vocab)");
      break;
  }
}

InputMode FeaturePipeline::input_mode() const {
  return source == FeatureSource::curve_tokens ? InputMode::tokens : InputMode::continuous;
}

int FeaturePipeline::seq_len() const {
  switch (source) {
    case FeatureSource::mel:
    case FeatureSource::mfcc: {
      const std::size_t frames = std::max<std::size_t>(1, window_samples / static_cast<std::size_t>(spectrogram.hop_length));
      const auto n = static_cast<std::size_t>(downsample);
      return static_cast<int>((frames + n - 1) / n);
    }
    case FeatureSource::reshape: return static_cast<int>(reshape_rows);
    case FeatureSource::curve_tokens:
      return static_cast<int>(1 + window_samples / (vocab ? vocab->spec().curve_len : 8));
  }
  return 0;
}

int FeaturePipeline::input_dim() const {
  switch (source) {
    case FeatureSource::mel: return spectrogram.n_mels;
    case FeatureSource::mfcc: return n_mfcc;
    case FeatureSource::reshape: return static_cast<int>(reshape_cols);
    case FeatureSource::curve_tokens: return vocab ? static_cast<int>(vocab->vocab_size()) : 0;
  }
  return 0;
}

FeatureMatrix FeaturePipeline::features(const AudioClip& window) const {
  FeatureMatrix f;
  switch (source) {
    case FeatureSource::mel: f = mel_spectrogram(window, spectrogram); break;
    case FeatureSource::mfcc: f = mfcc(window, spectrogram, n_mfcc); break;
    case FeatureSource::reshape: f = reshape_amplitudes(window, reshape_rows, reshape_cols); break;
    case FeatureSource::curve_tokens: throw ConfigError("curve-token pipeline produces tokens, not features");
  }
  if (downsample > 1) f = downsample_columns(f, downsample);
  if (normalize) f = normalize01(f);
  return f;
}

std::vector<std::int32_t> FeaturePipeline::tokens(const AudioClip& window) const {
  if (!vocab) throw ConfigError("curve-token pipeline has no vocabulary");
  return tokenize(window.samples, *vocab);
}

FeaturePipeline FeaturePipeline::from_config(const KeyValueConfig& cfg) {
  FeaturePipeline p;
  p.source = parse_source(cfg.get_string("features.kind", "mel"));
  p.spectrogram.n_fft = static_cast<int>(cfg.get_int("features.n_fft", 1024));
  p.spectrogram.hop_length = static_cast<int>(cfg.get_int("features.hop", 512));
  p.spectrogram.win_length = static_cast<int>(cfg.get_int("features.win", p.spectrogram.n_fft));
  p.spectrogram.n_mels = static_cast<int>(cfg.get_int("features.n_mels", 128));
  p.spectrogram.log_scale = cfg.get_bool("features.log_scale", true);
  p.n_mfcc = static_cast<int>(cfg.get_int("features.n_mfcc", p.spectrogram.n_mels));
  p.downsample = static_cast<int>(cfg.get_int("features.downsample", 1));
  p.normalize = cfg.get_bool("features.normalize", false);
  p.reshape_rows = static_cast<std::size_t>(cfg.get_int("features.reshape_rows", 256));
  p.reshape_cols = static_cast<std::size_t>(cfg.get_int("features.reshape_cols", 172));
  p.window_samples = static_cast<std::size_t>(cfg.get_int("train.window_samples", 220'500));
  p.vocab_path = cfg.get_string("features.vocab", "");
  if (p.source == FeatureSource::curve_tokens) {
    if (p.vocab_path.empty()) throw ConfigError("features.kind = tokens requires features.vocab");
    p.vocab = std::make_shared<const CurveVocab>(CurveVocab::decode(read_file_bytes(p.vocab_path)));
  }
  p.validate();
  return p;
}

void FeaturePipeline::to_config(KeyValueConfig& cfg) const {
  cfg.set("features.kind", to_string(source));
  cfg.set("features.n_fft", std::to_string(spectrogram.n_fft));
  cfg.set("features.hop", std::to_string(spectrogram.hop_length));
  cfg.set("features.win", std::to_string(spectrogram.win_length));
  cfg.set("features.n_mels", std::to_string(spectrogram.n_mels));
  cfg.set("features.log_scale", spectrogram.log_scale ? "true" : "false");
  cfg.set("features.n_mfcc", std::to_string(n_mfcc));
  cfg.set("features.downsample", std::to_string(downsample));
  cfg.set("features.normalize", normalize ? "true" : "false");
  cfg.set("features.reshape_rows", std::to_string(reshape_rows));
  cfg.set("features.reshape_cols", std::to_string(reshape_cols));
  cfg.set("train.window_samples", std::to_string(window_samples));
  if (!vocab_path.empty()) cfg.set("features.vocab", vocab_path);
}

Example make_example(const FeaturePipeline& p, const AudioClip& window, int label) {
  Example e;
  e.label = label;
  if (p.input_mode() == InputMode::tokens) {
    e.tokens = p.tokens(window);
  } else {
    e.features = p.features(window);
  }
  return e;
}

Batch make_batch(const FeaturePipeline& p, std::span<const Example> examples) {
  if (p.input_mode() == InputMode::tokens) {
    std::vector<std::vector<std::int32_t>> ids;
    ids.reserve(examples.size());
    for (const auto& e : examples) ids.push_back(e.tokens);
    return Batch::from_tokens(ids, static_cast<std::size_t>(p.seq_len()));
  }
  std::vector<FeatureMatrix> feats;
  feats.reserve(examples.size());
  for (const auto& e : examples) feats.push_back(e.features);
  return Batch::from_features(feats);
}

ModelConfig model_config_from(const KeyValueConfig& cfg, const FeaturePipeline& p, int classes) {
  const int hidden = static_cast<int>(cfg.get_int("model.hidden", 16));
  const int layers = static_cast<int>(cfg.get_int("model.layers", 1));
  const int heads = static_cast<int>(cfg.get_int("model.heads", 2));
  const int n_classes = static_cast<int>(cfg.get_int("model.classes", classes));
  ModelConfig m = p.input_mode() == InputMode::tokens
                      ? ModelConfig::tokens(p.input_dim(), p.seq_len(), hidden, layers, heads, n_classes)
                      : ModelConfig::continuous(p.input_dim(), p.seq_len(), hidden, layers, heads, n_classes);
  m.share_layers = cfg.get_bool("model.share_layers", false);
  m.dropout = static_cast<float>(cfg.get_double("model.dropout", 0.1));
  if (m.input_mode == InputMode::tokens) m.use_positional = cfg.get_bool("model.positional", true);
  m.validate();
  return m;
}

void model_config_to(KeyValueConfig& cfg, const ModelConfig& m) {
  cfg.set("model.hidden", std::to_string(m.hidden));
  cfg.set("model.layers", std::to_string(m.layers));
  cfg.set("model.heads", std::to_string(m.heads));
  cfg.set("model.classes", std::to_string(m.classes));
  cfg.set("model.share_layers", m.share_layers ? "true" : "false");
  cfg.set("model.dropout", std::to_string(m.dropout));
}

}  // namespace tinysound
