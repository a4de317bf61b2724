#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinysound/common.hpp"

namespace tinysound::augment {

using Signal = std::vector<float>;

enum class Kind {
  amplitude_clip,
  amplify,
  echo,
  lowpass,
  pitch_shift,
  partial_erase,
  speed_adjust,
  add_noise,
  hpss,
  bitwise_downsample,
  samplerate_downsample,
};

inline constexpr std::array<Kind, 11> kAllKinds = {
    Kind::amplitude_clip, Kind::amplify,       Kind::echo,
    Kind::lowpass,        Kind::pitch_shift,   Kind::partial_erase,
    Kind::speed_adjust,   Kind::add_noise,     Kind::hpss,
    Kind::bitwise_downsample, Kind::samplerate_downsample};

const char* to_string(Kind kind);
Kind parse_kind(const std::string& name);

/// Default draw range of the kind's random parameter.
std::pair<double, double> default_range(Kind kind);

struct AugmentSpec {
  Kind kind;
  double probability = 0.3;
  /// Overrides default_range(kind) when set.
  std::optional<std::pair<double, double>> range;
};

enum class HpssBranch { harmonic, percussive };

// Deterministic cores. Each takes the already-drawn parameter.

/// Clamps to +-u * max|x|.
Signal amplitude_clip(std::span<const float> x, double u);
Signal amplify(std::span<const float> x, double gain);
/// x'[i] = x[i] + x[i - delay] for i >= delay.
Signal echo(std::span<const float> x, std::size_t delay);
/// 5th-order Butterworth, cutoff as a fraction of Nyquist, single forward pass.
Signal lowpass(std::span<const float> x, double cutoff_fraction);
Signal pitch_shift(std::span<const float> x, double semitones);
/// Replaces x[offset, offset + round(fraction * n)) with N(0, std(x)^2).
Signal partial_erase(std::span<const float> x, double fraction, std::size_t offset, Rng& noise_rng);
/// Phase-vocoder stretch at `rate` (>1 is faster), trimmed or padded to n.
Signal speed_adjust(std::span<const float> x, double rate);
/// Adds N(0, (sigma_fraction * max|x|)^2).
Signal add_noise(std::span<const float> x, double sigma_fraction, Rng& noise_rng);
Signal hpss(std::span<const float> x, HpssBranch branch);
Signal bitwise_downsample(std::span<const float> x, int resolution);
Signal samplerate_downsample(std::span<const float> x, int k);

// Building blocks shared with tests.

/// Phase-vocoder time stretch (n_fft 2048, hop 512); output length round(n / rate).
Signal time_stretch(std::span<const float> x, double rate);
/// Trims or right-pads with zeros.
Signal fix_length(Signal x, std::size_t n);

/// Second-order sections (b0 b1 b2 a1 a2) of the 5th-order Butterworth lowpass.
std::vector<std::array<double, 5>> butterworth_lowpass_sections(int order, double cutoff_fraction);

struct HpssMasks {
  std::vector<double> harmonic;  // frames x bins
  std::vector<double> percussive;
};
/// Soft masks from median-filtered magnitudes (kernel 17 on both axes).
HpssMasks hpss_masks(std::span<const double> magnitude, std::size_t frames, std::size_t bins,
                     int kernel = 17);

/// Draws the kind's parameters from rng and applies it.
Signal apply_random(Kind kind, std::span<const float> x, Rng& rng,
                    std::optional<std::pair<double, double>> range = std::nullopt);

/// Applies each spec with its probability, in order.
Signal apply_pipeline(std::span<const float> x, std::span<const AugmentSpec> specs, Rng& rng);

}  // namespace tinysound::augment
