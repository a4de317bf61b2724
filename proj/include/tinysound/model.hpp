#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tinysound/common.hpp"
#include "tinysound/dsp.hpp"

namespace tinysound {

enum class InputMode : std::uint8_t { continuous = 0, tokens = 1 };

struct ModelConfig {
  InputMode input_mode = InputMode::continuous;
  /// Feature width F in continuous mode, vocabulary size in tokens mode.
  int input_dim = 128;
  int seq_len = 430;
  int hidden = 16;
  int layers = 1;
  int heads = 2;
  int ffn_dim = 64;
  int classes = 6;
  bool use_positional = false;
  bool share_layers = false;
  float dropout = 0.1f;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  int head_dim() const { return hidden / heads; }
  int layer_blocks() const { return share_layers ? 1 : layers; }

  /// Convenience constructor for continuous inputs with ffn_dim = 4H.
  static ModelConfig continuous(int input_dim, int seq_len, int hidden, int layers, int heads,
                                int classes);
  static ModelConfig tokens(int vocab_size, int seq_len, int hidden, int layers, int heads,
                            int classes);

  bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
  bool learnable = true;

  std::size_t size() const { return data.size(); }
};

/// Indices into ModelParams::tensors for one encoder block.
struct LayerSlots {
  std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  std::size_t attn_ln_g, attn_ln_b;
  std::size_t ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  std::size_t ffn_ln_g, ffn_ln_b;
};

struct ParamSlots {
  // continuous mode
  std::size_t bn_gamma = 0, bn_beta = 0, bn_mean = 0, bn_var = 0, map_w = 0, map_b = 0;
  // tokens mode
  std::size_t tok_emb = 0, pos_emb = 0;
  bool has_pos = false;
  std::size_t seg_emb = 0, emb_ln_g = 0, emb_ln_b = 0;
  std::vector<LayerSlots> blocks;
  std::size_t pool_w = 0, pool_b = 0, cls_w = 0, cls_b = 0;
};

/// All tensors of the encoder, in a fixed order determined by the config.
/// Batch-norm running statistics are stored as non-learnable tensors.
class ModelParams {
 public:
  ModelParams() = default;
  /// Allocates zero-filled tensors with the shapes implied by cfg.
  explicit ModelParams(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  const ParamSlots& slots() const { return slots_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  std::optional<std::size_t> find(const std::string& name) const;

  /// Number of learnable scalars actually allocated.
  std::size_t learnable_count() const;
  bool operator==(const ModelParams& o) const;

 private:
  ModelConfig config_;
  std::vector<Tensor> tensors_;
  ParamSlots slots_;
  std::map<std::string, std::size_t> by_name_;
};

/// Weights ~ N(0, 0.02^2) truncated at 2 sigma; biases and shifts 0; scales 1.
ModelParams init_model(const ModelConfig& cfg, Rng& rng);

/// A batch of B examples: B*L*F features (continuous) or B*L token ids.
struct Batch {
  std::size_t size = 0;
  std::vector<float> features;
  std::vector<std::int32_t> tokens;

  static Batch from_features(std::span<const FeatureMatrix> items);
  static Batch from_tokens(std::span<const std::vector<std::int32_t>> items, std::size_t seq_len);
  /// Example i as a one-element batch.
  Batch slice(std::size_t i, const ModelConfig& cfg) const;
};

struct ForwardOptions {
  bool training = false;
  /// Training mode only: normalize with batch statistics (true) or running ones.
  bool use_batch_stats = true;
  std::uint64_t dropout_seed = 0;
};

struct ForwardTrace;  // cached activations, defined in model.cpp

struct ForwardResult {
  MatrixRM logits;  // B x classes
  std::shared_ptr<ForwardTrace> trace;  // training mode only
  /// Softmax attention probabilities of the first example, layer-major then head.
  std::vector<MatrixRM> attention;
};

ForwardResult forward(const ModelParams& params, const Batch& batch, const ForwardOptions& opts,
                      bool keep_attention = false);
/// Eval-mode logits, one example at a time.
MatrixRM predict_logits(const ModelParams& params, const Batch& batch);

/// Gradients shaped like ModelParams::tensors (zero for non-learnable ones).
struct Gradients {
  std::vector<std::vector<double>> values;
};

Gradients backward(const ModelParams& params, const ForwardTrace& trace, const MatrixRM& dlogits);

/// Folds the batch statistics of a training forward into the running averages.
void update_running_stats(ModelParams& params, const ForwardTrace& trace, double momentum = 0.1);

std::uint64_t count_params(const ModelConfig& cfg);

enum class MacConvention { per_position, total };
/// per_position: each weight matrix, embedding table and normalization scale
/// counted once, plus L for batch norm. total: every multiply-accumulate of
/// one forward pass, including the L^2 attention terms.
std::uint64_t count_mult_adds(const ModelConfig& cfg, MacConvention convention);

/// Serialized model config block shared by the checkpoint formats.
void write_config(ByteWriter& w, const ModelConfig& cfg);
ModelConfig read_config(ByteReader& r);

}  // namespace tinysound
