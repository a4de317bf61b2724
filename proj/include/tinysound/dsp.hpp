#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tinysound/audio_io.hpp"

namespace tinysound {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SpectrogramConfig {
  int n_fft = 1024;
  int hop_length = 512;
  int win_length = 1024;
  int n_mels = 128;
  int sample_rate = kTargetSampleRate;
  bool log_scale = true;

  int bins() const { return n_fft / 2 + 1; }
  void validate() const;
};

enum class FeatureKind : std::uint8_t { mel = 0, mfcc = 1, amplitude_reshape = 2 };

const char* to_string(FeatureKind kind);

/// Row-major L x F matrix of per-frame feature vectors.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
  FeatureKind kind = FeatureKind::mel;
  double frame_rate = 0.0;

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

/// Which frames an STFT keeps. `truncated` drops the final centered frame so
/// that L == floor(n / hop); `full` keeps all 1 + floor(n / hop) frames.
enum class Framing { truncated, full };

struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> data;  // frames x bins
  SpectrogramConfig config;
  std::size_t n_samples = 0;

  std::complex<double>& at(std::size_t t, std::size_t k) { return data[t * bins + k]; }
  const std::complex<double>& at(std::size_t t, std::size_t k) const { return data[t * bins + k]; }
};

std::vector<double> hann_window(int length);

ComplexSpectrogram stft(std::span<const float> samples, const SpectrogramConfig& cfg,
                        Framing framing = Framing::truncated);
ComplexSpectrogram stft(const AudioClip& clip, const SpectrogramConfig& cfg);

/// Weighted overlap-add inverse; reproduces spec.n_samples unless a length is given.
std::vector<float> istft_samples(const ComplexSpectrogram& spec, std::size_t length);
AudioClip istft(const ComplexSpectrogram& spec);

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Slaney-style triangular filters from 0 to sr/2, area-normalized.
MatrixRM mel_filterbank(const SpectrogramConfig& cfg);
/// Center frequency in Hz of each mel band.
std::vector<double> mel_band_centers(const SpectrogramConfig& cfg);

FeatureMatrix mel_spectrogram(const AudioClip& clip, const SpectrogramConfig& cfg);
/// Orthonormal DCT-II basis, n_coeffs x n.
MatrixRM dct_matrix(int n_coeffs, int n);
FeatureMatrix mfcc(const AudioClip& clip, const SpectrogramConfig& cfg, int n_coeffs);
/// DCT of an already log-scaled mel matrix.
FeatureMatrix mfcc_from_log_mel(const FeatureMatrix& log_mel, int n_coeffs);

/// Keeps frames 0, n, 2n, ...; the output has ceil(L / n) rows.
FeatureMatrix downsample_columns(const FeatureMatrix& f, int n);
/// First l*d samples laid out as l rows of d values.
FeatureMatrix reshape_amplitudes(const AudioClip& clip, std::size_t l, std::size_t d);
/// Min-max scaling to [0, 1]; constant input maps to zeros.
FeatureMatrix normalize01(const FeatureMatrix& f);

/// "TSFM" dump: magic, u32 L, u32 F, u8 kind, row-major f32 data.
std::vector<std::uint8_t> encode_feature_matrix(const FeatureMatrix& f);
FeatureMatrix decode_feature_matrix(std::span<const std::uint8_t> bytes);

}  // namespace tinysound
