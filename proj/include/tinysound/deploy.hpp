#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tinysound/checkpoint.hpp"
#include "tinysound/model.hpp"
#include "tinysound/pipeline.hpp"

namespace tinysound {

/// One tensor of a quantized model. Linear weights are int8 with a symmetric
/// per-tensor scale; everything else stays f32.
struct QTensor {
  std::string name;
  std::vector<int> shape;
  bool is_int8 = false;
  float scale = 1.0f;
  std::vector<std::int8_t> q;
  std::vector<float> f;  // non-quantized tensors only

  std::size_t size() const { return is_int8 ? q.size() : f.size(); }
};

/// Immutable once built. Holds the widened weights used for inference.
class QuantizedParams {
 public:
  QuantizedParams() = default;
  QuantizedParams(ModelConfig cfg, std::vector<QTensor> tensors);

  const ModelConfig& config() const { return config_; }
  const std::vector<QTensor>& tensors() const { return tensors_; }
  /// Weights after dequantization (what qforward computes with).
  const ModelParams& dequantized() const { return dense_; }

  /// Bytes of int8 payload plus scales for the quantized tensors.
  std::size_t quantized_weight_bytes() const;
  /// Bytes the same tensors occupy in f32.
  std::size_t f32_weight_bytes() const;

 private:
  ModelConfig config_;
  std::vector<QTensor> tensors_;
  ModelParams dense_;
};

/// Whether a tensor name is a linear-layer weight (mapping, attention
/// projections, feed-forward, pooler, classifier).
bool is_linear_weight(const std::string& name);

struct QuantizedTensor {
  float scale = 1.0f;
  std::vector<std::int8_t> q;
};
/// scale = max|W| / 127 (1 for an all-zero tensor), q = round-half-away(W / scale).
QuantizedTensor quantize_tensor(std::span<const float> w);
std::vector<float> dequantize_tensor(const QuantizedTensor& t);

QuantizedParams quantize_dynamic(const ModelParams& params);
ModelParams dequantize(const QuantizedParams& q);

/// Eval-mode logits computed with the dequantized linear weights.
MatrixRM qforward(const QuantizedParams& q, const Batch& batch);

/// "TSCQ" layout: magic, u32 version, config block, metadata, tensor table
/// (name, dims, dtype tag 0=f32 / 1=i8, f32 scale, payload).
std::vector<std::uint8_t> encode_quantized(const QuantizedParams& q,
                                           const std::map<std::string, std::string>& metadata = {});
QuantizedParams decode_quantized(std::span<const std::uint8_t> bytes,
                                 std::map<std::string, std::string>* metadata = nullptr);
void save_quantized(const std::string& path, const QuantizedParams& q,
                    const std::map<std::string, std::string>& metadata = {});
QuantizedParams load_quantized(const std::string& path,
                               std::map<std::string, std::string>* metadata = nullptr);

struct BenchReport {
  std::string label;
  bool quantized = false;
  int runs = 0;
  int warmup = 0;
  double mean_ms = 0.0, min_ms = 0.0, max_ms = 0.0;  // model forward
  double feature_mean_ms = 0.0;                      // feature extraction
  std::uint64_t params = 0;
  std::size_t size_bytes = 0;  // serialized model

  std::string to_json() const;
};

/// Times feature extraction and one forward on a fixed synthetic window.
/// Runs on the calling thread; warmup iterations are discarded.
BenchReport bench(const ModelParams& params, const FeaturePipeline& pipeline, int n_runs = 10,
                  int warmup = 3);
BenchReport bench(const QuantizedParams& q, const FeaturePipeline& pipeline, int n_runs = 10,
                  int warmup = 3);

}  // namespace tinysound
