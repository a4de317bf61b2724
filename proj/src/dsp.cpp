#include "tinysound/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tinysound/fft.hpp"

namespace tinysound {

void SpectrogramConfig::validate() const {
  if (n_fft < 2) throw ConfigError("SpectrogramConfig: n_fft must be >= 2");
  if (hop_length <= 0) throw ConfigError("SpectrogramConfig: hop_length must be positive");
  if (win_length <= 0 || win_length > n_fft)
    throw ConfigError("SpectrogramConfig: win_length must be in [1, n_fft]");
  if (n_mels < 1 || n_mels > bins())
    throw ConfigError("SpectrogramConfig: n_mels " + std::to_string(n_mels) +
                      " exceeds n_fft/2+1 = " + std::to_string(bins()));
  if (sample_rate <= 0) throw ConfigError("SpectrogramConfig: sample_rate must be positive");
}

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::mel: return "mel";
    case FeatureKind::mfcc: return "mfcc";
    case FeatureKind::amplitude_reshape: return "amplitude_reshape";
  }
  return "?";
}

std::vector<double> hann_window(int length) {
  // Periodic Hann, the FFT-bin convention.
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i)
    w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  return w;
}

namespace {

// Window of win_length centered inside n_fft.
std::vector<double> padded_window(const SpectrogramConfig& cfg) {
  std::vector<double> w(static_cast<std::size_t>(cfg.n_fft), 0.0);
  const auto hann = hann_window(cfg.win_length);
  const std::size_t off = static_cast<std::size_t>((cfg.n_fft - cfg.win_length) / 2);
  std::copy(hann.begin(), hann.end(), w.begin() + static_cast<std::ptrdiff_t>(off));
  return w;
}

// Reflect-without-edge-repeat index into [0, n).
std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

}  // namespace

ComplexSpectrogram stft(std::span<const float> samples, const SpectrogramConfig& cfg,
                        Framing framing) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("stft: empty signal");
  const auto n = static_cast<long>(samples.size());
  const long pad = cfg.n_fft / 2;
  const std::size_t full_frames = 1 + samples.size() / static_cast<std::size_t>(cfg.hop_length);
  const std::size_t frames =
      framing == Framing::full ? full_frames : std::max<std::size_t>(1, full_frames - 1);

  ComplexSpectrogram spec;
  spec.config = cfg;
  spec.frames = frames;
  spec.bins = static_cast<std::size_t>(cfg.bins());
  spec.n_samples = samples.size();
  spec.data.resize(spec.frames * spec.bins);

  const auto window = padded_window(cfg);
  RealFft fft(static_cast<std::size_t>(cfg.n_fft));
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  for (std::size_t t = 0; t < frames; ++t) {
    const long start = static_cast<long>(t) * cfg.hop_length - pad;
    for (long j = 0; j < cfg.n_fft; ++j)
      frame[static_cast<std::size_t>(j)] =
          window[static_cast<std::size_t>(j)] * samples[reflect_index(start + j, n)];
    fft.forward(frame, std::span(spec.data.data() + t * spec.bins, spec.bins));
  }
  return spec;
}

ComplexSpectrogram stft(const AudioClip& clip, const SpectrogramConfig& cfg) {
  return stft(clip.samples, cfg, Framing::truncated);
}

std::vector<float> istft_samples(const ComplexSpectrogram& spec, std::size_t length) {
  const auto& cfg = spec.config;
  const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
  const auto hop = static_cast<std::size_t>(cfg.hop_length);
  const std::size_t pad = n_fft / 2;
  const std::size_t total = n_fft + hop * (spec.frames > 0 ? spec.frames - 1 : 0);
  std::vector<double> acc(total, 0.0), wsum(total, 0.0), frame(n_fft);
  const auto window = padded_window(cfg);
  RealFft fft(n_fft);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    fft.inverse(std::span(spec.data.data() + t * spec.bins, spec.bins), frame);
    for (std::size_t j = 0; j < n_fft; ++j) {
      acc[t * hop + j] += frame[j] * window[j];
      wsum[t * hop + j] += window[j] * window[j];
    }
  }
  std::vector<float> out(length, 0.0f);
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t k = i + pad;
    if (k < total && wsum[k] > 1e-8) out[i] = static_cast<float>(acc[k] / wsum[k]);
  }
  return out;
}

AudioClip istft(const ComplexSpectrogram& spec) {
  AudioClip clip;
  clip.sample_rate = spec.config.sample_rate;
  clip.samples = istft_samples(spec, spec.n_samples);
  return clip;
}

// ---------------------------------------------------------------------------
// Mel scale (Slaney: linear below 1 kHz, logarithmic above)

namespace {
constexpr double kMinLogHz = 1000.0;
constexpr double kFSp = 200.0 / 3.0;
constexpr double kMinLogMel = kMinLogHz / kFSp;
const double kLogStep = std::log(6.4) / 27.0;

std::vector<double> mel_points(const SpectrogramConfig& cfg) {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> hz(static_cast<std::size_t>(cfg.n_mels + 2));
  for (std::size_t i = 0; i < hz.size(); ++i)
    hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(hz.size() - 1));
  return hz;
}
}  // namespace

double hz_to_mel(double hz) {
  if (hz < kMinLogHz) return hz / kFSp;
  return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMinLogMel) return mel * kFSp;
  return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

std::vector<double> mel_band_centers(const SpectrogramConfig& cfg) {
  auto pts = mel_points(cfg);
  return {pts.begin() + 1, pts.end() - 1};
}

MatrixRM mel_filterbank(const SpectrogramConfig& cfg) {
  cfg.validate();
  const int n_bins = cfg.bins();
  const auto pts = mel_points(cfg);
  MatrixRM fb = MatrixRM::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lower = pts[static_cast<std::size_t>(m)];
    const double center = pts[static_cast<std::size_t>(m + 1)];
    const double upper = pts[static_cast<std::size_t>(m + 2)];
    const double enorm = 2.0 / (upper - lower);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double rise = (f - lower) / (center - lower);
      const double fall = (upper - f) / (upper - center);
      fb(m, k) = std::max(0.0, std::min(rise, fall)) * enorm;
    }
  }
  return fb;
}

FeatureMatrix mel_spectrogram(const AudioClip& clip, const SpectrogramConfig& cfg) {
  const auto spec = stft(clip.samples, cfg, Framing::truncated);
  const MatrixRM fb = mel_filterbank(cfg);
  MatrixRM power(static_cast<Eigen::Index>(spec.frames), static_cast<Eigen::Index>(spec.bins));
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t k = 0; k < spec.bins; ++k)
      power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = std::norm(spec.at(t, k));
  MatrixRM mel = power * fb.transpose();

  if (cfg.log_scale) {
    mel = mel.unaryExpr([](double p) { return 10.0 * std::log10(std::max(p, 1e-10)); });
    const double floor = mel.maxCoeff() - 80.0;
    mel = mel.cwiseMax(floor);
  }

  FeatureMatrix out;
  out.rows = spec.frames;
  out.cols = static_cast<std::size_t>(cfg.n_mels);
  out.kind = FeatureKind::mel;
  out.frame_rate = static_cast<double>(cfg.sample_rate) / cfg.hop_length;
  out.data.resize(out.rows * out.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(mel.data()[i]);
  return out;
}

MatrixRM dct_matrix(int n_coeffs, int n) {
  if (n_coeffs < 1 || n_coeffs > n) throw ConfigError("dct_matrix: need 1 <= n_coeffs <= n");
  MatrixRM m(n_coeffs, n);
  for (int k = 0; k < n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i)
      m(k, i) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
  }
  return m;
}

FeatureMatrix mfcc_from_log_mel(const FeatureMatrix& log_mel, int n_coeffs) {
  const int n = static_cast<int>(log_mel.cols);
  if (n_coeffs > n) throw ConfigError("mfcc: n_coeffs must not exceed n_mels");
  const MatrixRM dct = dct_matrix(n_coeffs, n);
  FeatureMatrix out;
  out.rows = log_mel.rows;
  out.cols = static_cast<std::size_t>(n_coeffs);
  out.kind = FeatureKind::mfcc;
  out.frame_rate = log_mel.frame_rate;
  out.data.resize(out.rows * out.cols);
  Eigen::VectorXd frame(n);
  for (std::size_t t = 0; t < log_mel.rows; ++t) {
    for (int i = 0; i < n; ++i) frame(i) = log_mel.at(t, static_cast<std::size_t>(i));
    const Eigen::VectorXd c = dct * frame;
    for (int k = 0; k < n_coeffs; ++k) out.at(t, static_cast<std::size_t>(k)) = static_cast<float>(c(k));
  }
  return out;
}

FeatureMatrix mfcc(const AudioClip& clip, const SpectrogramConfig& cfg, int n_coeffs) {
  if (n_coeffs < 1 || n_coeffs > cfg.n_mels) throw ConfigError("mfcc: need 1 <= n_coeffs <= n_mels");
  SpectrogramConfig log_cfg = cfg;
  log_cfg.log_scale = true;
  return mfcc_from_log_mel(mel_spectrogram(clip, log_cfg), n_coeffs);
}

FeatureMatrix downsample_columns(const FeatureMatrix& f, int n) {
  if (n < 1) throw ConfigError("downsample_columns: factor must be >= 1");
  FeatureMatrix out;
  const auto step = static_cast<std::size_t>(n);
  out.rows = (f.rows + step - 1) / step;
  out.cols = f.cols;
  out.kind = f.kind;
  out.frame_rate = f.frame_rate / n;
  out.data.reserve(out.rows * out.cols);
  for (std::size_t r = 0; r < f.rows; r += step) {
    const auto row = f.row(r);
    out.data.insert(out.data.end(), row.begin(), row.end());
  }
  return out;
}

FeatureMatrix reshape_amplitudes(const AudioClip& clip, std::size_t l, std::size_t d) {
  if (l == 0 || d == 0) throw ConfigError("reshape_amplitudes: l and d must be positive");
  if (clip.samples.size() < l * d)
    throw ConfigError("reshape_amplitudes: need " + std::to_string(l * d) + " samples, have " +
                      std::to_string(clip.samples.size()));
  FeatureMatrix out;
  out.rows = l;
  out.cols = d;
  out.kind = FeatureKind::amplitude_reshape;
  out.frame_rate = static_cast<double>(clip.sample_rate) / static_cast<double>(d);
  out.data.assign(clip.samples.begin(), clip.samples.begin() + static_cast<std::ptrdiff_t>(l * d));
  return out;
}

FeatureMatrix normalize01(const FeatureMatrix& f) {
  FeatureMatrix out = f;
  if (f.data.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(f.data.begin(), f.data.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  for (auto& x : out.data) x = static_cast<float>((x - lo) / (hi - lo));
  return out;
}

std::vector<std::uint8_t> encode_feature_matrix(const FeatureMatrix& f) {
  ByteWriter w;
  w.put_magic("TSFM");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.rows));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.cols));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(f.kind));
  w.put_bytes(f.data.data(), f.data.size() * sizeof(float));
  return w.take();
}

FeatureMatrix decode_feature_matrix(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.data(), bytes.size(), "feature matrix");
  r.expect_magic("TSFM");
  FeatureMatrix f;
  f.rows = r.get<std::uint32_t>();
  f.cols = r.get<std::uint32_t>();
  const auto kind = r.get<std::uint8_t>();
  if (kind > 2) throw FormatError("feature matrix: unknown kind " + std::to_string(kind));
  f.kind = static_cast<FeatureKind>(kind);
  f.data.resize(f.rows * f.cols);
  r.get_bytes(f.data.data(), f.data.size() * sizeof(float));
  return f;
}

}  // namespace tinysound
