#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "tinysound/deploy.hpp"
#include "tinysound/pipeline.hpp"

using namespace tinysound;

namespace {

ModelConfig tiny() { return ModelConfig::continuous(128, 430, 16, 1, 2, 6); }

Batch random_mel(Rng& rng, const ModelConfig& cfg) {
  Batch b;
  b.size = 1;
  b.features.resize(static_cast<std::size_t>(cfg.seq_len * cfg.input_dim));
  for (auto& v : b.features) v = static_cast<float>(uniform(rng, -80.0, 0.0));
  return b;
}

}  // namespace

TEST_SUITE("deploy") {

TEST_CASE("quantize a tensor") {
  const std::vector<float> w = {0.5f, -1.0f};
  const auto q = quantize_tensor(w);
  CHECK(q.scale == doctest::Approx(1.0 / 127.0));
  CHECK(q.q == std::vector<std::int8_t>{64, -127});
  const auto z = quantize_tensor(std::vector<float>(5, 0.0f));
  CHECK(z.scale == 1.0f);
  for (auto v : z.q) CHECK(v == 0);
  const std::vector<float> bad = {1.0f, std::nanf("")};
  CHECK_THROWS_AS(quantize_tensor(bad), ConfigError);
}

TEST_CASE("rounding bound and idempotence") {
  Rng rng(2);
  std::vector<float> w(1000);
  for (auto& v : w) v = static_cast<float>(uniform(rng, -0.3, 0.3));
  const auto q = quantize_tensor(w);
  const auto d = dequantize_tensor(q);
  for (std::size_t i = 0; i < w.size(); ++i) {
    REQUIRE(std::abs(q.q[i]) <= 127);
    REQUIRE(std::abs(d[i] - w[i]) <= q.scale / 2 * (1 + 1e-5));
  }
  const auto q2 = quantize_tensor(d);
  CHECK(q2.q == q.q);
  CHECK(q2.scale == doctest::Approx(q.scale).epsilon(1e-6));
}

TEST_CASE("only linear weights are quantized") {
  Rng rng(1);
  const auto p = init_model(tiny(), rng);
  const auto q = quantize_dynamic(p);
  int n8 = 0;
  for (const auto& t : q.tensors()) {
    CHECK(t.is_int8 == t.name.ends_with(".weight"));
    n8 += t.is_int8;
    if (t.is_int8) {
      CHECK(t.scale > 0.0f);
      for (auto v : t.q) REQUIRE(v >= -127);
    }
  }
  CHECK(n8 == 9);  // mapping, q/k/v/o, ffn in/out, pooler, classifier
}

TEST_CASE("quantized inference agrees with f32") {
  Rng rng(1);
  const auto p = init_model(tiny(), rng);
  const auto q = quantize_dynamic(p);
  int agree = 0;
  double worst = 0.0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const auto b = random_mel(rng, p.config());
    const auto lf = predict_logits(p, b), lq = qforward(q, b);
    Eigen::Index af, aq;
    lf.row(0).maxCoeff(&af);
    lq.row(0).maxCoeff(&aq);
    agree += af == aq;
    worst = std::max(worst, (lf - lq).cwiseAbs().maxCoeff());
  }
  CHECK(agree >= 95 * n / 100);
  MESSAGE("max logit deviation " << worst);
  CHECK(worst < 5e-3);

  Batch zero;
  zero.size = 1;
  zero.features.assign(128 * 430, 0.0f);
  CHECK((predict_logits(p, zero) - qforward(q, zero)).cwiseAbs().maxCoeff() < 5e-3);
  CHECK(qforward(q, zero) == qforward(q, zero));
}

TEST_CASE("quantized weights equal dequantize-then-forward") {
  Rng rng(4);
  const auto p = init_model(tiny(), rng);
  const auto q = quantize_dynamic(p);
  const auto d = dequantize(q);
  const auto b = random_mel(rng, p.config());
  CHECK((predict_logits(d, b) - qforward(q, b)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("serialization and size budget") {
  Rng rng(1);
  const auto p = init_model(tiny(), rng);
  const auto q = quantize_dynamic(p);
  const auto bytes = encode_quantized(q, {{"k", "v"}});
  CHECK(bytes.size() <= 256u * 1024u);
  std::map<std::string, std::string> meta;
  const auto back = decode_quantized(bytes, &meta);
  CHECK(meta.at("k") == "v");
  REQUIRE(back.tensors().size() == q.tensors().size());
  for (std::size_t i = 0; i < q.tensors().size(); ++i) {
    CHECK(back.tensors()[i].q == q.tensors()[i].q);
    CHECK(back.tensors()[i].f == q.tensors()[i].f);
    CHECK(back.tensors()[i].scale == q.tensors()[i].scale);
  }
  CHECK(back.dequantized() == q.dequantized());
  CHECK(static_cast<double>(q.quantized_weight_bytes()) <= 0.26 * static_cast<double>(q.f32_weight_bytes()));

  auto cut = bytes;
  cut.resize(cut.size() - 1);
  CHECK_THROWS_AS(decode_quantized(cut), FormatError);
  auto tag = bytes;
  tag[0] = 'X';
  CHECK_THROWS_AS(decode_quantized(tag), FormatError);
}

TEST_CASE("bench report") {
  Rng rng(1);
  FeaturePipeline pipe;
  pipe.window_samples = 44100;
  const auto cfg = ModelConfig::continuous(128, pipe.seq_len(), 16, 1, 2, 6);
  const auto p = init_model(cfg, rng);
  const auto r = bench(p, pipe, 4, 1);
  CHECK(r.runs == 4);
  CHECK(r.min_ms <= r.mean_ms);
  CHECK(r.mean_ms <= r.max_ms);
  CHECK(r.params == 5954);
  CHECK(r.feature_mean_ms > 0.0);
  const auto rq = bench(quantize_dynamic(p), pipe, 3, 0);
  CHECK(rq.quantized);
  CHECK(rq.size_bytes < r.size_bytes);
  const auto json = rq.to_json();
  CHECK(json.front() == '{');
  CHECK(json.find("\"runs\":3") != std::string::npos);
  CHECK(json.find('\n') == std::string::npos);
  CHECK_THROWS_AS(bench(p, pipe, 0, 0), ConfigError);
  FeaturePipeline other = pipe;
  other.window_samples = 88200;
  CHECK_THROWS_AS(bench(p, other, 1, 0), ConfigError);
}

TEST_CASE("latency ordering against the large config") {
  auto load = [](const char* name) {
    const auto kv = KeyValueConfig::load(std::string(TINYSOUND_CONFIG_DIR) + "/" + name);
    const auto pipe = FeaturePipeline::from_config(kv);
    Rng rng(3);
    return std::pair{init_model(model_config_from(kv, pipe, 6), rng), pipe};
  };
  const auto [small, small_pipe] = load("tiny.cfg");
  const auto [large, large_pipe] = load("esc50_large.cfg");
  CHECK(count_params(large.config()) == 935648);
  const auto rs = bench(small, small_pipe, 5, 1);
  const auto rl = bench(large, large_pipe, 3, 1);
  const auto rq = bench(quantize_dynamic(large), large_pipe, 3, 1);
  MESSAGE("tiny " << rs.mean_ms << " ms, large " << rl.mean_ms << " ms, large int8 " << rq.mean_ms << " ms");
  CHECK(rs.mean_ms < rl.mean_ms);
  CHECK(rq.mean_ms <= rl.mean_ms * 1.1);
}

}
