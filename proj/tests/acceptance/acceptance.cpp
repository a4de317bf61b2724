// Acceptance checks: one PASS/FAIL/SKIP line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <string>

#include "fixtures.hpp"
#include "run_cli.hpp"
#include "synthetic.hpp"
#include "tinysound/augment.hpp"
#include "tinysound/deploy.hpp"
#include "tinysound/dsp.hpp"
#include "tinysound/fft.hpp"
#include "tinysound/tokenizer.hpp"
#include "tinysound/train.hpp"

using namespace tinysound;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum { pass, fail, skip } status;
  std::string detail;
};

Outcome check(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Shared by 4 and 9.
const fs::path& synthetic_root() {
  static const fs::path root = [] {
    auto dir = fixtures::temp_dir("acceptance_synthetic");
    synthetic::write_dataset(dir, 60, 1.0, 2024);
    return dir;
  }();
  return root;
}

// 1 -------------------------------------------------------------------------
Outcome param_counts() {
  std::string detail;
  bool ok = true;
  for (auto [L, expect] : {std::pair{86, 5954ull}, std::pair{430, 6642ull}}) {
    const auto cfg = ModelConfig::continuous(128, L, 16, 1, 2, 6);
    const auto formula = count_params(cfg);
    const auto tally = ModelParams(cfg).learnable_count();
    ok &= formula == expect && tally == expect;
    detail += fmt("L=%d formula %llu tally %zu; ", L, static_cast<unsigned long long>(formula), tally);
  }
  return check(ok, detail);
}

// 2 -------------------------------------------------------------------------
double grad_error(ModelParams p, const Batch& b, const std::vector<int>& labels) {
  auto loss = [&](const ModelParams& q) { return cross_entropy(forward(q, b, {true, true, 0}).logits, labels).loss; };
  const auto fwd = forward(p, b, {true, true, 0});
  const auto g = backward(p, *fwd.trace, cross_entropy(fwd.logits, labels).dlogits);
  double worst = 0.0;
  for (std::size_t ti = 0; ti < p.tensors().size(); ++ti) {
    auto& t = p.at(ti);
    if (!t.learnable) continue;
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const float orig = t.data[j], hi = orig + 1e-3f, lo = orig - 1e-3f;
      t.data[j] = hi;
      const double lp = loss(p);
      t.data[j] = lo;
      const double lm = loss(p);
      t.data[j] = orig;
      const double fd = (lp - lm) / (static_cast<double>(hi) - lo);
      const double a = g.values[ti][j];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4}));
    }
  }
  return worst;
}

Outcome gradients() {
  const std::vector<int> labels = {1, 2};
  Rng rng(11);
  auto cc = ModelConfig::continuous(6, 4, 8, 1, 2, 3);
  cc.dropout = 0.0f;
  ModelParams pc = init_model(cc, rng);
  for (auto& t : pc.tensors())
    for (auto& v : t.data) v += static_cast<float>(uniform(rng, -0.3, 0.3));
  Batch bc;
  bc.size = 2;
  bc.features = fixtures::cont_input(2, 4, 6);
  const double ec = grad_error(pc, bc, labels);

  auto tc = ModelConfig::tokens(20, 6, 8, 1, 2, 3);
  tc.dropout = 0.0f;
  ModelParams pt = init_model(tc, rng);
  for (auto& t : pt.tensors())
    for (auto& v : t.data) v += static_cast<float>(uniform(rng, -0.3, 0.3));
  Batch bt;
  bt.size = 2;
  bt.tokens = {2, 4, 9, 19, 1, 1, 2, 3, 3, 0, 7, 12};
  const double et = grad_error(pt, bt, labels);
  return check(ec < 1e-3 && et < 1e-3, fmt("max relative error continuous %.2e, tokens %.2e", ec, et));
}

// 3 -------------------------------------------------------------------------
Outcome dsp() {
  SpectrogramConfig cfg;
  std::vector<float> s(16384);
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<float>(std::sin(2 * std::numbers::pi * 37 * static_cast<double>(i) / cfg.n_fft));
  const auto spec = stft(s, cfg);
  bool bin_ok = true;
  for (std::size_t t = 1; t + 1 < spec.frames; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < spec.bins; ++k)
      if (std::abs(spec.at(t, k)) > std::abs(spec.at(t, best))) best = k;
    bin_ok &= best == 37;
  }

  const auto x = fixtures::test_signal(44100);
  const auto full = stft(x, cfg, Framing::full);
  const auto y = istft_samples(full, x.size());
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
  const double rms = std::sqrt(se / static_cast<double>(x.size()));

  const auto d = dct_matrix(128, 128);
  const double ortho = (d * d.transpose() - MatrixRM::Identity(128, 128)).cwiseAbs().maxCoeff();

  AudioClip one, five;
  one.samples.assign(44100, 0.1f);
  five.samples.assign(220500, 0.1f);
  const auto l1 = mel_spectrogram(one, cfg).rows, l5 = mel_spectrogram(five, cfg).rows;

  // -3 dB point of the lowpass, bisected on the analytic response
  double worst_cut = 0.0;
  for (double c : {0.05, 0.1, 0.2}) {
    const auto sos = augment::butterworth_lowpass_sections(5, c);
    auto mag = [&](double w) {
      const std::complex<double> z1 = std::polar(1.0, -w), z2 = z1 * z1;
      std::complex<double> h = 1.0;
      for (const auto& q : sos) h *= (q[0] + q[1] * z1 + q[2] * z2) / (1.0 + q[3] * z1 + q[4] * z2);
      return std::abs(h);
    };
    double lo = 1e-6, hi = std::numbers::pi;
    for (int i = 0; i < 100; ++i) (mag(0.5 * (lo + hi)) > std::sqrt(0.5) ? lo : hi) = 0.5 * (lo + hi);
    worst_cut = std::max(worst_cut, std::abs(lo / std::numbers::pi - c) / c);
  }
  const bool ok = bin_ok && rms < 1e-4 && ortho < 1e-9 && l1 == 86 && l5 == 430 && worst_cut < 0.05;
  return check(ok, fmt("sine bin %s, istft rms %.1e, dct %.1e, L %zu/%zu, lowpass -3dB error %.2f%%",
                       bin_ok ? "ok" : "wrong", rms, ortho, l1, l5, 100 * worst_cut));
}

// 4 -------------------------------------------------------------------------
Outcome learnability() {
  const auto manifest = load_manifest(synthetic_root(), ManifestLayout::folder_per_class);
  const auto kv = KeyValueConfig::load(std::string(TINYSOUND_CONFIG_DIR) + "/synthetic.cfg");
  const auto pipe = FeaturePipeline::from_config(kv);
  const auto model = model_config_from(kv, pipe, 3);
  auto tc = TrainConfig::from_config(kv);
  tc.log = false;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train_loop(manifest, model, pipe, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  int first = 0;
  for (const auto& m : r.history)
    if (m.val_acc >= 0.9) {
      first = m.epoch;
      break;
    }
  return check(r.best_val_acc >= 0.9 && tc.epochs <= 100 && secs < 600,
               fmt("best held-out accuracy %.3f (>= 0.9 first at epoch %d of %d), L=%d, %zu params, %.0f s",
                   r.best_val_acc, first, tc.epochs, model.seq_len, static_cast<std::size_t>(count_params(model)), secs));
}

// 5 -------------------------------------------------------------------------
Outcome esc50() {
  const char* root = std::getenv("ESC50_ROOT");
  if (root == nullptr || !fs::exists(root)) return {Outcome::skip, "ESC50_ROOT not set or missing; dataset not present"};
  const auto manifest = load_manifest(root, ManifestLayout::csv_manifest);
  auto kv = KeyValueConfig::load(std::string(TINYSOUND_CONFIG_DIR) + "/tiny.cfg");
  kv.erase("model.classes");
  kv.set("train.lr", "0.001");
  kv.set("train.warmup_steps", "500");
  kv.set("train.batch_size", "32");
  const auto pipe = FeaturePipeline::from_config(kv);
  const auto model = model_config_from(kv, pipe, static_cast<int>(manifest.class_names.size()));
  auto tc = TrainConfig::from_config(kv);
  tc.log = true;
  const auto r = train_loop(manifest, model, pipe, tc);
  return check(r.best_val_acc >= 0.2, fmt("fold-5 accuracy %.3f over %zu classes", r.best_val_acc, manifest.class_names.size()));
}

// 6 -------------------------------------------------------------------------
// Naive occurrence-weighted coverage: counts every stride-1 window by hand.
double brute_coverage(const std::vector<AudioClip>& corpus, const CurveSpec& spec) {
  std::map<std::vector<int>, long> counts;
  long total = 0;
  for (const auto& c : corpus) {
    std::vector<int> q;
    for (float v : c.samples) {
      const double x = std::clamp(static_cast<double>(v), -1.0, 1.0);
      q.push_back(static_cast<int>(std::min(std::floor((x + 1) / 2 * spec.resolution), spec.resolution - 1.0)));
    }
    for (std::size_t i = 0; i + spec.curve_len <= q.size(); ++i) {
      std::vector<int> w(q.begin() + static_cast<long>(i), q.begin() + static_cast<long>(i + spec.curve_len));
      if (spec.mode == CurveMode::relative) {
        const int m = *std::min_element(w.begin(), w.end());
        for (auto& v : w) v -= m;
      }
      ++counts[w];
      ++total;
    }
  }
  std::vector<std::pair<long, std::vector<int>>> ranked;
  for (const auto& [w, n] : counts) ranked.emplace_back(-n, w);
  std::sort(ranked.begin(), ranked.end());
  long covered = 0;
  for (std::size_t i = 0; i < std::min<std::size_t>(spec.top_k, ranked.size()); ++i) covered -= ranked[i].first;
  return static_cast<double>(covered) / static_cast<double>(total);
}

Outcome tokenizer() {
  bool ok = true;
  std::string detail;
  // constant signal
  AudioClip flat;
  flat.samples.assign(800, -0.2f);
  const auto fb = build_curve_vocab(std::vector<AudioClip>{flat}, CurveSpec{});
  const auto ids = tokenize(flat.samples, fb.vocab);
  bool single = fb.vocab.curves().size() == 1 && ids.size() == 101;
  for (std::size_t i = 1; i < ids.size(); ++i) single &= ids[i] == kFirstCurveToken;
  ok &= single;
  detail += single ? "constant ok; " : "constant FAILED; ";

  // seeded corpus of noisy decaying tones
  std::vector<AudioClip> corpus;
  Rng rng(6);
  for (int c = 0; c < 12; ++c) {
    AudioClip clip;
    const double f = uniform(rng, 100, 3000), a = uniform(rng, 0.2, 0.9), dc = uniform(rng, -0.2, 0.2);
    std::normal_distribution<double> noise(0.0, 0.02);
    for (int i = 0; i < 4000; ++i)
      clip.samples.push_back(static_cast<float>(dc + a * std::exp(-i / 3000.0) * std::sin(2 * std::numbers::pi * f * i / 44100.0) + noise(rng)));
    corpus.push_back(std::move(clip));
  }
  CurveSpec spec;
  spec.top_k = 2000;
  const auto abs = build_curve_vocab(corpus, spec);
  spec.mode = CurveMode::relative;
  const auto rel = build_curve_vocab(corpus, spec);
  CurveSpec abs_spec = spec;
  abs_spec.mode = CurveMode::absolute;
  const double ba = brute_coverage(corpus, abs_spec), br = brute_coverage(corpus, spec);
  const bool brute_ok = std::abs(ba - abs.stats.vocab_coverage) < 1e-12 && std::abs(br - rel.stats.vocab_coverage) < 1e-12;
  ok &= brute_ok && rel.stats.vocab_coverage >= abs.stats.vocab_coverage;
  detail += fmt("coverage relative %.4f >= absolute %.4f (brute force %s); ", rel.stats.vocab_coverage,
                abs.stats.vocab_coverage, brute_ok ? "agrees" : "DISAGREES");

  // closure: concatenated vocabulary curves tokenize without UNK
  std::vector<float> text;
  for (const auto& curve : abs.vocab.curves())
    for (auto level : curve) text.push_back(static_cast<float>((level + 0.5) / (abs.vocab.spec().resolution / 2.0) - 1.0));
  std::size_t unk = 0;
  for (auto id : tokenize(text, abs.vocab)) unk += id == kUnkToken;
  ok &= unk == 0;
  detail += fmt("closure UNK count %zu", unk);
  return check(ok, detail);
}

// 7 -------------------------------------------------------------------------
Outcome quantization() {
  const auto cfg = ModelConfig::continuous(128, 430, 16, 1, 2, 6);
  Rng rng(7);
  const auto p = init_model(cfg, rng);
  const auto q = quantize_dynamic(p);
  int agree = 0;
  Batch b;
  b.size = 1;
  b.features.resize(128 * 430);
  for (int i = 0; i < 1000; ++i) {
    for (auto& v : b.features) v = static_cast<float>(uniform(rng, -80.0, 0.0));
    Eigen::Index af, aq;
    predict_logits(p, b).row(0).maxCoeff(&af);
    qforward(q, b).row(0).maxCoeff(&aq);
    agree += af == aq;
  }
  const auto dir = fixtures::temp_dir("acceptance_quant");
  save_quantized((dir / "tiny.tscq").string(), q);
  const auto size = fs::file_size(dir / "tiny.tscq");
  const double ratio = static_cast<double>(q.quantized_weight_bytes()) / static_cast<double>(q.f32_weight_bytes());
  return check(agree >= 950 && size <= 256 * 1024 && ratio <= 0.26,
               fmt("argmax agreement %d/1000, file %ju bytes, weight payload %.1f%% of f32", agree,
                   static_cast<std::uintmax_t>(size), 100 * ratio));
}

// 8 -------------------------------------------------------------------------
double energy(std::span<const float> x) {
  double e = 0.0;
  for (float v : x) e += static_cast<double>(v) * v;
  return e;
}

double peak_hz(std::span<const float> x) {
  std::vector<double> buf(x.begin(), x.end());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] *= 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(buf.size()));
  RealFft fft(buf.size());
  std::vector<std::complex<double>> spec(buf.size() / 2 + 1);
  fft.forward(buf, spec);
  std::size_t best = 1;
  for (std::size_t k = 1; k < spec.size(); ++k)
    if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
  return static_cast<double>(best) * 44100.0 / static_cast<double>(buf.size());
}

Outcome augmentations() {
  using namespace augment;
  const auto x = fixtures::test_signal(44100);
  std::vector<std::string> failed;
  for (Kind k : kAllKinds) {
    Rng a(31), b(31);
    const auto ya = apply_random(k, x, a), yb = apply_random(k, x, b);
    if (ya.size() != x.size() || ya != yb) failed.push_back(std::string(to_string(k)) + " length/determinism");
  }
  auto expect = [&](bool ok, const char* what) { if (!ok) failed.push_back(what); };

  const auto e = echo(x, 700);
  bool echo_ok = true;
  for (std::size_t i = 0; i < x.size(); ++i) echo_ok &= e[i] == (i >= 700 ? x[i] + x[i - 700] : x[i]);
  expect(echo_ok, "echo identity");

  std::vector<float> tone(44100);
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 1000.0 * static_cast<double>(i) / 44100.0));
  const auto shifted = pitch_shift(tone, 3.0);
  const double want = 1000.0 * std::pow(2.0, 3.0 / 12.0);
  expect(std::abs(peak_hz(std::span(shifted).subspan(11025, 22050)) - want) / want < 0.01, "pitch shift peak");

  const double th = energy(hpss(tone, HpssBranch::harmonic)), tp = energy(hpss(tone, HpssBranch::percussive));
  std::vector<float> clicks(44100, 0.0f);
  for (std::size_t i = 500; i < clicks.size(); i += 4410) clicks[i] = 0.9f;
  const double ch = energy(hpss(clicks, HpssBranch::harmonic)), cp = energy(hpss(clicks, HpssBranch::percussive));
  expect(th / (th + tp) > 0.9 && cp / (ch + cp) > 0.9, "hpss energy split");

  const auto clipped = amplitude_clip(x, 0.5);
  const double mx = std::abs(*std::max_element(x.begin(), x.end(), [](float a, float b) { return std::abs(a) < std::abs(b); }));
  expect(std::all_of(clipped.begin(), clipped.end(), [&](float v) { return std::abs(v) <= 0.5 * mx + 1e-6; }), "clip bound");
  const auto amp = amplify(x, 0.7);
  expect(std::abs(energy(amp) / energy(x) - 0.49) < 1e-6, "amplify energy");
  const auto lp = lowpass(tone, 0.02);  // 441 Hz cutoff, 1 kHz tone mostly removed
  expect(energy(std::span(lp).subspan(4410)) < 0.01 * energy(std::span(tone).subspan(4410)), "lowpass attenuation");
  Rng r1(1);
  const auto erased = partial_erase(x, 0.25, 1000, r1);
  expect(std::equal(x.begin(), x.begin() + 1000, erased.begin()) && std::equal(x.begin() + 12025, x.end(), erased.begin() + 12025),
         "partial erase region");
  expect(std::abs(peak_hz(speed_adjust(tone, 0.8)) - 1000.0) < 10.0, "speed adjust keeps pitch");
  Rng r2(2);
  const auto noisy = add_noise(x, 0.02, r2);
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += std::pow(noisy[i] - x[i], 2);
  expect(std::abs(std::sqrt(se / 44100.0) / (0.02 * mx) - 1.0) < 0.05, "noise level");
  const auto bits = bitwise_downsample(x, 64);
  expect(std::all_of(bits.begin(), bits.end(), [](float v) { return std::abs(v * 64 - std::round(v * 64)) < 1e-4; }), "bit grid");
  const auto held = samplerate_downsample(x, 5);
  bool hold_ok = true;
  for (std::size_t i = 0; i < x.size(); ++i) hold_ok &= held[i] == x[i - i % 5];
  expect(hold_ok, "sample hold");

  std::string detail = failed.empty() ? "11 transforms: length, determinism and per-kind checks ok" : "failed:";
  for (const auto& f : failed) detail += " " + f + ";";
  return check(failed.empty(), detail);
}

// 9 -------------------------------------------------------------------------
Outcome reproducibility() {
  const auto dir = fixtures::temp_dir("acceptance_repro");
  const std::string cfg = std::string(TINYSOUND_CONFIG_DIR) + "/synthetic.cfg";
  std::string csv[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = dir / ("run" + std::to_string(i));
    const auto r = run_cli("train --quiet --seed 7 --config \"" + cfg + "\" --data \"" + synthetic_root().string() +
                           "\" --out \"" + out.string() + "\"");
    if (r.code != 0) return check(false, "train exited with " + std::to_string(r.code) + ": " + r.err);
    csv[i] = read_text(out / "metrics.csv");
  }
  const auto lines = std::count(csv[0].begin(), csv[0].end(), '\n');
  return check(!csv[0].empty() && csv[0] == csv[1], fmt("two CLI runs, %ld metric rows each, %s", static_cast<long>(lines - 1),
                                                      csv[0] == csv[1] ? "identical" : "DIFFERENT"));
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "parameter counts", param_counts},   {2, "gradient check", gradients},
      {3, "dsp oracles", dsp},                 {4, "synthetic learnability", learnability},
      {5, "esc-50 smoke", esc50},              {6, "curve tokenizer", tokenizer},
      {7, "quantization", quantization},       {8, "augmentation suite", augmentations},
      {9, "reproducibility", reproducibility},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::fail ? "FAIL" : "SKIP";
    failures += o.status == Outcome::fail;
    std::printf("[%s] %d %s: %s (%.2f s)\n", tag, c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
