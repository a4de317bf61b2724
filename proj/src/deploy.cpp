#include "tinysound/deploy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace tinysound {

namespace {

constexpr std::uint32_t kQuantizedVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeI8 = 1;

ModelParams widen(const ModelConfig& cfg, const std::vector<QTensor>& tensors) {
  ModelParams p(cfg);
  if (p.tensors().size() != tensors.size())
    throw FormatError("quantized model: tensor count " + std::to_string(tensors.size()) +
                      " does not match config (" + std::to_string(p.tensors().size()) + ")");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& src = tensors[i];
    auto& dst = p.at(i);
    if (src.name != dst.name || src.shape != dst.shape)
      throw FormatError("quantized model: expected tensor " + dst.name + ", found " + src.name);
    if (src.is_int8)
      dst.data = dequantize_tensor({src.scale, src.q});
    else
      dst.data = src.f;
  }
  return p;
}

}  // namespace

QuantizedParams::QuantizedParams(ModelConfig cfg, std::vector<QTensor> tensors)
    : config_(std::move(cfg)), tensors_(std::move(tensors)), dense_(widen(config_, tensors_)) {}

std::size_t QuantizedParams::quantized_weight_bytes() const {
  std::size_t n = 0;
  for (const auto& t : tensors_)
    if (t.is_int8) n += t.q.size() + sizeof(float);
  return n;
}

std::size_t QuantizedParams::f32_weight_bytes() const {
  std::size_t n = 0;
  for (const auto& t : tensors_)
    if (t.is_int8) n += t.q.size() * sizeof(float);
  return n;
}

bool is_linear_weight(const std::string& name) { return name.ends_with(".weight"); }

QuantizedTensor quantize_tensor(std::span<const float> w) {
  float max_abs = 0.0f;
  for (float x : w) {
    if (!std::isfinite(x)) throw ConfigError("quantize: non-finite weight");
    max_abs = std::max(max_abs, std::fabs(x));
  }
  QuantizedTensor t;
  t.scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
  t.q.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    // std::round rounds half away from zero
    const double r = std::round(static_cast<double>(w[i]) / static_cast<double>(t.scale));
    t.q[i] = static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
  }
  return t;
}

std::vector<float> dequantize_tensor(const QuantizedTensor& t) {
  std::vector<float> out(t.q.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(t.q[i]) * t.scale;
  return out;
}

QuantizedParams quantize_dynamic(const ModelParams& params) {
  std::vector<QTensor> out;
  out.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) {
    QTensor q;
    q.name = t.name;
    q.shape = t.shape;
    if (is_linear_weight(t.name)) {
      auto qt = quantize_tensor(t.data);
      q.is_int8 = true;
      q.scale = qt.scale;
      q.q = std::move(qt.q);
    } else {
      q.f = t.data;
    }
    out.push_back(std::move(q));
  }
  return QuantizedParams(params.config(), std::move(out));
}

ModelParams dequantize(const QuantizedParams& q) { return q.dequantized(); }

MatrixRM qforward(const QuantizedParams& q, const Batch& batch) {
  return predict_logits(q.dequantized(), batch);
}

std::vector<std::uint8_t> encode_quantized(const QuantizedParams& q,
                                           const std::map<std::string, std::string>& metadata) {
  ByteWriter w;
  w.put_magic("TSCQ");
  w.put<std::uint32_t>(kQuantizedVersion);
  write_config(w, q.config());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(q.tensors().size()));
  for (const auto& t : q.tensors()) {
    w.put_string(t.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint8_t>(t.is_int8 ? kDtypeI8 : kDtypeF32);
    w.put<float>(t.scale);
    if (t.is_int8)
      w.put_bytes(t.q.data(), t.q.size());
    else
      w.put_bytes(t.f.data(), t.f.size() * sizeof(float));
  }
  return w.take();
}

QuantizedParams decode_quantized(std::span<const std::uint8_t> bytes,
                                 std::map<std::string, std::string>* metadata) {
  ByteReader r(bytes.data(), bytes.size(), "quantized model");
  r.expect_magic("TSCQ");
  const auto version = r.get<std::uint32_t>();
  if (version != kQuantizedVersion)
    throw FormatError("quantized model: unsupported version " + std::to_string(version));
  const ModelConfig cfg = read_config(r);
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string();
    auto v = r.get_string();
    if (metadata) (*metadata)[k] = std::move(v);
  }
  const auto n = r.get<std::uint32_t>();
  std::vector<QTensor> tensors(n);
  for (auto& t : tensors) {
    t.name = r.get_string();
    const auto nd = r.get<std::uint8_t>();
    std::size_t count = 1;
    for (std::uint8_t d = 0; d < nd; ++d) {
      t.shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
      count *= static_cast<std::size_t>(t.shape.back());
    }
    const auto dtype = r.get<std::uint8_t>();
    t.scale = r.get<float>();
    if (dtype == kDtypeI8) {
      if (!(t.scale > 0.0f)) throw FormatError("quantized model: non-positive scale for " + t.name);
      t.is_int8 = true;
      t.q.resize(count);
      r.get_bytes(t.q.data(), count);
      for (auto v : t.q)
        if (v == -128) throw FormatError("quantized model: int8 value -128 in " + t.name);
    } else if (dtype == kDtypeF32) {
      t.f.resize(count);
      r.get_bytes(t.f.data(), count * sizeof(float));
    } else {
      throw FormatError("quantized model: unknown dtype tag " + std::to_string(dtype) + " for " + t.name);
    }
  }
  if (r.remaining() != 0) throw FormatError("quantized model: trailing bytes after tensor table");
  return QuantizedParams(cfg, std::move(tensors));
}

void save_quantized(const std::string& path, const QuantizedParams& q,
                    const std::map<std::string, std::string>& metadata) {
  write_file_bytes(path, encode_quantized(q, metadata));
}

QuantizedParams load_quantized(const std::string& path, std::map<std::string, std::string>* metadata) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_quantized(bytes, metadata);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::string BenchReport::to_json() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"label\":\"%s\",\"quantized\":%s,\"runs\":%d,\"warmup\":%d,\"mean_ms\":%.4f,"
                "\"min_ms\":%.4f,\"max_ms\":%.4f,\"feature_mean_ms\":%.4f,\"params\":%llu,"
                "\"size_bytes\":%zu}",
                label.c_str(), quantized ? "true" : "false", runs, warmup, mean_ms, min_ms, max_ms,
                feature_mean_ms, static_cast<unsigned long long>(params), size_bytes);
  return buf;
}

namespace {

AudioClip bench_window(const FeaturePipeline& p) {
  AudioClip clip;
  clip.sample_rate = kTargetSampleRate;
  clip.samples.resize(p.window_samples);
  Rng rng(1234);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const double t = static_cast<double>(i) / kTargetSampleRate;
    clip.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * t) + noise(rng));
  }
  return clip;
}

template <class Infer>
BenchReport run_bench(const ModelConfig& cfg, const FeaturePipeline& p, int n_runs, int warmup,
                      Infer&& infer) {
  if (n_runs < 1) throw ConfigError("bench: run count must be >= 1");
  if (warmup < 0) throw ConfigError("bench: warmup must be >= 0");
  if (p.seq_len() != cfg.seq_len || p.input_dim() != cfg.input_dim || p.input_mode() != cfg.input_mode)
    throw ConfigError("bench: feature pipeline does not match the model input geometry");
  using clock = std::chrono::steady_clock;
  const AudioClip window = bench_window(p);
  BenchReport rep;
  rep.runs = n_runs;
  rep.warmup = warmup;
  rep.params = count_params(cfg);
  std::vector<double> model_ms, feat_ms;
  for (int i = 0; i < warmup + n_runs; ++i) {
    const auto t0 = clock::now();
    const Example ex = make_example(p, window, 0);
    const auto t1 = clock::now();
    const Batch batch = make_batch(p, std::span(&ex, 1));
    const auto t2 = clock::now();
    volatile double sink = infer(batch)(0, 0);
    (void)sink;
    const auto t3 = clock::now();
    if (i < warmup) continue;
    feat_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    model_ms.push_back(std::chrono::duration<double, std::milli>(t3 - t2).count());
  }
  double sum = 0.0, fsum = 0.0;
  for (double v : model_ms) sum += v;
  for (double v : feat_ms) fsum += v;
  rep.mean_ms = sum / n_runs;
  rep.min_ms = *std::min_element(model_ms.begin(), model_ms.end());
  rep.max_ms = *std::max_element(model_ms.begin(), model_ms.end());
  rep.feature_mean_ms = fsum / n_runs;
  return rep;
}

}  // namespace

BenchReport bench(const ModelParams& params, const FeaturePipeline& pipeline, int n_runs, int warmup) {
  auto rep = run_bench(params.config(), pipeline, n_runs, warmup,
                       [&](const Batch& b) { return predict_logits(params, b); });
  rep.label = "f32";
  rep.size_bytes = encode_checkpoint({params, std::nullopt, 0, 0, {}}).size();
  return rep;
}

BenchReport bench(const QuantizedParams& q, const FeaturePipeline& pipeline, int n_runs, int warmup) {
  auto rep = run_bench(q.config(), pipeline, n_runs, warmup,
                       [&](const Batch& b) { return qforward(q, b); });
  rep.label = "int8";
  rep.quantized = true;
  rep.size_bytes = encode_quantized(q).size();
  return rep;
}

}  // namespace tinysound
