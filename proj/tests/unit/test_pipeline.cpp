#include <doctest.h>

#include "fixtures.hpp"
#include "tinysound/pipeline.hpp"

using namespace tinysound;

TEST_SUITE("pipeline") {

TEST_CASE("config parsing") {
  const auto kv = KeyValueConfig::parse("# comment\n a = 1 \nb=x # trailing\nlist = 1, 2,3\nflag = yes\n", "t.cfg");
  CHECK(kv.get_int("a", 0) == 1);
  CHECK(kv.get_string("b", "") == "x");
  CHECK(kv.get_list("list") == std::vector<std::string>{"1", "2", "3"});
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_double("missing", 2.5) == 2.5);
  CHECK_THROWS_AS(kv.get_int("b", 0), ConfigError);
  CHECK_THROWS_AS(kv.get_bool("b", false), ConfigError);
  try {
    KeyValueConfig::parse("ok = 1\nnot a pair\n", "t.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("t.cfg:2") != std::string::npos);
  }
  CHECK(KeyValueConfig::parse(kv.to_string()).values() == kv.values());
}

TEST_CASE("sequence length and width per feature kind") {
  FeaturePipeline p;
  CHECK(p.seq_len() == 430);
  CHECK(p.input_dim() == 128);
  p.downsample = 3;
  CHECK(p.seq_len() == 144);
  p.downsample = 1;
  p.window_samples = 44100;
  CHECK(p.seq_len() == 86);
  p.source = FeatureSource::mfcc;
  p.n_mfcc = 40;
  CHECK(p.input_dim() == 40);
  p.source = FeatureSource::reshape;
  p.reshape_rows = 100;
  p.reshape_cols = 441;
  CHECK(p.seq_len() == 100);
  CHECK(p.input_dim() == 441);
  p.reshape_cols = 500;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("features have the advertised geometry") {
  AudioClip clip;
  clip.samples = fixtures::test_signal(44100);
  for (auto src : {FeatureSource::mel, FeatureSource::mfcc, FeatureSource::reshape}) {
    FeaturePipeline p;
    p.source = src;
    p.window_samples = 44100;
    p.n_mfcc = 20;
    p.reshape_rows = 100;
    p.reshape_cols = 441;
    p.downsample = src == FeatureSource::reshape ? 1 : 2;
    p.normalize = true;
    const auto f = p.features(clip);
    CHECK(static_cast<int>(f.rows) == p.seq_len());
    CHECK(static_cast<int>(f.cols) == p.input_dim());
    for (float v : f.data) REQUIRE((v >= 0.0f && v <= 1.0f));
  }
}

TEST_CASE("config round trip and model config") {
  const auto kv = KeyValueConfig::parse(
      "features.kind = mfcc\nfeatures.n_mels = 64\nfeatures.n_mfcc = 20\nfeatures.hop = 256\n"
      "train.window_samples = 44100\nmodel.hidden = 32\nmodel.layers = 2\nmodel.heads = 4\nmodel.share_layers = true\n");
  const auto p = FeaturePipeline::from_config(kv);
  CHECK(p.seq_len() == 172);
  CHECK(p.input_dim() == 20);
  KeyValueConfig back;
  p.to_config(back);
  const auto p2 = FeaturePipeline::from_config(back);
  CHECK(p2.seq_len() == p.seq_len());
  CHECK(p2.input_dim() == p.input_dim());
  const auto m = model_config_from(kv, p, 5);
  CHECK(m.hidden == 32);
  CHECK(m.ffn_dim == 128);
  CHECK(m.share_layers);
  CHECK(m.classes == 5);
  CHECK(m.seq_len == 172);
  CHECK_THROWS_AS(FeaturePipeline::from_config(KeyValueConfig::parse("features.kind = wavelet\n")), ConfigError);
  CHECK_THROWS_AS(FeaturePipeline::from_config(KeyValueConfig::parse("features.kind = tokens\n")), ConfigError);
  CHECK_THROWS_AS(model_config_from(KeyValueConfig::parse("model.heads = 3\n"), p, 5), ConfigError);
}

TEST_CASE("token pipeline") {
  auto dir = fixtures::temp_dir("token_pipe");
  CurveSpec spec;
  spec.curve_len = 4;
  spec.resolution = 16;
  AudioClip clip;
  clip.samples = fixtures::test_signal(4000);
  const auto build = build_curve_vocab(std::vector<AudioClip>{clip}, spec);
  write_file_bytes((dir / "v.tscv").string(), build.vocab.encode());
  const auto kv = KeyValueConfig::parse("features.kind = tokens\nfeatures.vocab = " + (dir / "v.tscv").string() +
                                        "\ntrain.window_samples = 1000\n");
  const auto p = FeaturePipeline::from_config(kv);
  CHECK(p.input_mode() == InputMode::tokens);
  CHECK(p.seq_len() == 251);
  CHECK(p.input_dim() == static_cast<int>(build.vocab.vocab_size()));
  AudioClip w;
  w.samples.assign(clip.samples.begin(), clip.samples.begin() + 1000);
  const auto ex = make_example(p, w, 1);
  CHECK(ex.tokens.size() == 251);
  const auto batch = make_batch(p, std::span(&ex, 1));
  CHECK(batch.tokens.size() == 251);
}

}
