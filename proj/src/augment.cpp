#include "tinysound/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "tinysound/audio_io.hpp"
#include "tinysound/dsp.hpp"

namespace tinysound::augment {

namespace {

double max_abs(std::span<const float> x) {
  double m = 0.0;
  for (float v : x) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

double draw(Rng& rng, std::pair<double, double> r) {
  return r.first == r.second ? r.first : uniform(rng, r.first, r.second);
}

long draw_int(Rng& rng, std::pair<double, double> r) {
  return uniform_int(rng, std::lround(r.first), std::lround(r.second));
}

}  // namespace

const char* to_string(Kind kind) {
  switch (kind) {
    case Kind::amplitude_clip: return "amplitude_clip";
    case Kind::amplify: return "amplify";
    case Kind::echo: return "echo";
    case Kind::lowpass: return "lowpass";
    case Kind::pitch_shift: return "pitch_shift";
    case Kind::partial_erase: return "partial_erase";
    case Kind::speed_adjust: return "speed_adjust";
    case Kind::add_noise: return "add_noise";
    case Kind::hpss: return "hpss";
    case Kind::bitwise_downsample: return "bitwise_downsample";
    case Kind::samplerate_downsample: return "samplerate_downsample";
  }
  return "?";
}

Kind parse_kind(const std::string& name) {
  for (Kind k : kAllKinds)
    if (name == to_string(k)) return k;
  throw ConfigError("unknown augmentation '" + name + "'");
}

std::pair<double, double> default_range(Kind kind) {
  switch (kind) {
    case Kind::amplitude_clip: return {0.75, 1.0};
    case Kind::amplify: return {0.5, 1.5};
    case Kind::echo: return {882, 17640};  // 2%..40% of one second at 44.1 kHz
    case Kind::lowpass: return {0.05, 0.20};
    case Kind::pitch_shift: return {0.0, 4.0};
    case Kind::partial_erase: return {0.0, 0.30};
    case Kind::speed_adjust: return {0.5, 1.5};
    case Kind::add_noise: return {0.0, 0.05};
    case Kind::hpss: return {0.0, 1.0};
    case Kind::bitwise_downsample: return {40, 100};
    case Kind::samplerate_downsample: return {2, 9};
  }
  return {0.0, 0.0};
}

Signal fix_length(Signal x, std::size_t n) {
  x.resize(n, 0.0f);
  return x;
}

Signal amplitude_clip(std::span<const float> x, double u) {
  const auto t = static_cast<float>(u * max_abs(x));
  Signal y(x.begin(), x.end());
  for (auto& v : y) v = std::clamp(v, -t, t);
  return y;
}

Signal amplify(std::span<const float> x, double gain) {
  Signal y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(gain * x[i]);
  return y;
}

Signal echo(std::span<const float> x, std::size_t delay) {
  Signal y(x.begin(), x.end());
  for (std::size_t i = delay; i < x.size(); ++i) y[i] = x[i] + x[i - delay];
  return y;
}

std::vector<std::array<double, 5>> butterworth_lowpass_sections(int order, double cutoff_fraction) {
  if (order < 1) throw ConfigError("butterworth: order must be >= 1");
  if (!(cutoff_fraction > 0.0 && cutoff_fraction < 1.0))
    throw ConfigError("butterworth: cutoff must be in (0, 1) of Nyquist");
  // Prewarped analog cutoff for the bilinear map s = (z - 1) / (z + 1).
  const double wa = std::tan(std::numbers::pi * cutoff_fraction / 2.0);
  std::vector<std::array<double, 5>> sections;
  auto digital_pole = [&](int k) {
    const double theta = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
    const std::complex<double> s = wa * std::polar(1.0, theta);
    return (1.0 + s) / (1.0 - s);
  };
  for (int k = 0; k < order / 2; ++k) {
    const auto z = digital_pole(k);
    const double a1 = -2.0 * z.real();
    const double a2 = std::norm(z);
    const double g = (1.0 + a1 + a2) / 4.0;  // unity gain at DC
    sections.push_back({g, 2.0 * g, g, a1, a2});
  }
  if (order % 2 == 1) {
    const double zr = digital_pole(order / 2).real();
    const double a1 = -zr;
    const double g = (1.0 + a1) / 2.0;
    sections.push_back({g, g, 0.0, a1, 0.0});
  }
  return sections;
}

Signal lowpass(std::span<const float> x, double cutoff_fraction) {
  std::vector<double> buf(x.begin(), x.end());
  for (const auto& s : butterworth_lowpass_sections(5, cutoff_fraction)) {
    double z1 = 0.0, z2 = 0.0;  // transposed direct form II
    for (auto& v : buf) {
      const double in = v;
      const double out = s[0] * in + z1;
      z1 = s[1] * in - s[3] * out + z2;
      z2 = s[2] * in - s[4] * out;
      v = out;
    }
  }
  return {buf.begin(), buf.end()};
}

Signal time_stretch(std::span<const float> x, double rate) {
  if (!(rate > 0.0)) throw ConfigError("time_stretch: rate must be positive");
  SpectrogramConfig cfg;
  cfg.n_fft = 2048;
  cfg.win_length = 2048;
  cfg.hop_length = 512;
  cfg.n_mels = 1;
  const auto spec = stft(x, cfg, Framing::full);
  const std::size_t bins = spec.bins;
  const std::size_t n_in = spec.frames;

  std::vector<double> phi_advance(bins);
  for (std::size_t k = 0; k < bins; ++k)
    phi_advance[k] = std::numbers::pi * cfg.hop_length * static_cast<double>(k) / static_cast<double>(bins - 1);

  std::vector<double> steps;
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) * rate;
    if (t >= static_cast<double>(n_in)) break;
    steps.push_back(t);
  }

  ComplexSpectrogram out;
  out.config = cfg;
  out.bins = bins;
  out.frames = steps.size();
  out.data.resize(out.frames * bins);
  std::vector<double> phase(bins);
  for (std::size_t k = 0; k < bins; ++k) phase[k] = std::arg(spec.at(0, k));

  auto column = [&](std::size_t t, std::size_t k) {
    return t < n_in ? spec.at(t, k) : std::complex<double>{};
  };
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const auto t = static_cast<std::size_t>(steps[j]);
    const double alpha = steps[j] - static_cast<double>(t);
    for (std::size_t k = 0; k < bins; ++k) {
      const auto c0 = column(t, k), c1 = column(t + 1, k);
      const double mag = (1.0 - alpha) * std::abs(c0) + alpha * std::abs(c1);
      out.at(j, k) = std::polar(mag, phase[k]);
      double dphase = std::arg(c1) - std::arg(c0) - phi_advance[k];
      dphase -= 2.0 * std::numbers::pi * std::round(dphase / (2.0 * std::numbers::pi));
      phase[k] += phi_advance[k] + dphase;
    }
  }
  const auto length = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) / rate));
  return istft_samples(out, length);
}

Signal pitch_shift(std::span<const float> x, double semitones) {
  const double r = std::pow(2.0, semitones / 12.0);
  // Lengthen by r without changing pitch, then squeeze back by resampling.
  const Signal stretched = time_stretch(x, 1.0 / r);
  return fix_length(resample_ratio(stretched, 1.0 / r), x.size());
}

Signal partial_erase(std::span<const float> x, double fraction, std::size_t offset, Rng& noise_rng) {
  Signal y(x.begin(), x.end());
  const auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(x.size())));
  if (m == 0 || x.empty()) return y;
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / static_cast<double>(x.size()));
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1e-12);
  const std::size_t end = std::min(x.size(), offset + m);
  for (std::size_t i = offset; i < end; ++i)
    y[i] = sigma > 0.0 ? static_cast<float>(noise(noise_rng)) : 0.0f;
  return y;
}

Signal speed_adjust(std::span<const float> x, double rate) {
  return fix_length(time_stretch(x, rate), x.size());
}

Signal add_noise(std::span<const float> x, double sigma_fraction, Rng& noise_rng) {
  const double sigma = sigma_fraction * max_abs(x);
  Signal y(x.begin(), x.end());
  if (sigma <= 0.0) return y;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : y) v = static_cast<float>(v + noise(noise_rng));
  return y;
}

namespace {

// scipy.ndimage 'reflect' boundary: (d c b a | a b c d | d c b a).
long reflect_edge(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

HpssMasks hpss_masks(std::span<const double> magnitude, std::size_t frames, std::size_t bins,
                     int kernel) {
  const long half = kernel / 2;
  std::vector<double> harm(frames * bins), perc(frames * bins), window(static_cast<std::size_t>(kernel));
  auto median = [&] {
    auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
    std::nth_element(window.begin(), mid, window.end());
    return *mid;
  };
  const auto nf = static_cast<long>(frames), nb = static_cast<long>(bins);
  for (long t = 0; t < nf; ++t) {
    for (long k = 0; k < nb; ++k) {
      for (long j = -half; j <= half; ++j)
        window[static_cast<std::size_t>(j + half)] =
            magnitude[static_cast<std::size_t>(reflect_edge(t + j, nf) * nb + k)];
      harm[static_cast<std::size_t>(t * nb + k)] = median();
      for (long j = -half; j <= half; ++j)
        window[static_cast<std::size_t>(j + half)] =
            magnitude[static_cast<std::size_t>(t * nb + reflect_edge(k + j, nb))];
      perc[static_cast<std::size_t>(t * nb + k)] = median();
    }
  }
  HpssMasks m;
  m.harmonic.resize(frames * bins);
  m.percussive.resize(frames * bins);
  for (std::size_t i = 0; i < harm.size(); ++i) {
    // Ratios are taken relative to the larger component so tiny magnitudes
    // still split exactly; bins where both vanish split evenly.
    const double z = std::max(harm[i], perc[i]);
    if (z <= 0.0) {
      m.harmonic[i] = m.percussive[i] = 0.5;
      continue;
    }
    const double h2 = (harm[i] / z) * (harm[i] / z);
    const double p2 = (perc[i] / z) * (perc[i] / z);
    m.harmonic[i] = h2 / (h2 + p2);
    m.percussive[i] = p2 / (h2 + p2);
  }
  return m;
}

Signal hpss(std::span<const float> x, HpssBranch branch) {
  SpectrogramConfig cfg;
  cfg.n_fft = 1024;
  cfg.win_length = 1024;
  cfg.hop_length = 512;
  cfg.n_mels = 1;
  auto spec = stft(x, cfg, Framing::full);
  std::vector<double> mag(spec.data.size());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(spec.data[i]);
  const auto masks = hpss_masks(mag, spec.frames, spec.bins);
  const auto& mask = branch == HpssBranch::harmonic ? masks.harmonic : masks.percussive;
  for (std::size_t i = 0; i < spec.data.size(); ++i) spec.data[i] *= mask[i];
  return istft_samples(spec, x.size());
}

Signal bitwise_downsample(std::span<const float> x, int resolution) {
  if (resolution < 1) throw ConfigError("bitwise_downsample: resolution must be >= 1");
  Signal y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = static_cast<float>(std::floor(static_cast<double>(x[i]) * resolution) / resolution);
  return y;
}

Signal samplerate_downsample(std::span<const float> x, int k) {
  if (k < 1) throw ConfigError("samplerate_downsample: k must be >= 1");
  Signal y(x.begin(), x.end());
  const auto step = static_cast<std::size_t>(k);
  for (std::size_t i = 0; i < x.size(); i += step)
    for (std::size_t j = i; j < std::min(x.size(), i + step); ++j) y[j] = x[i];
  return y;
}

Signal apply_random(Kind kind, std::span<const float> x, Rng& rng,
                    std::optional<std::pair<double, double>> range) {
  const auto r = range.value_or(default_range(kind));
  switch (kind) {
    case Kind::amplitude_clip: return amplitude_clip(x, draw(rng, r));
    case Kind::amplify: return amplify(x, draw(rng, r));
    case Kind::echo: return echo(x, static_cast<std::size_t>(draw_int(rng, r)));
    case Kind::lowpass: return lowpass(x, draw(rng, r));
    case Kind::pitch_shift: return pitch_shift(x, draw(rng, r));
    case Kind::partial_erase: {
      const double f = draw(rng, r);
      const auto m = static_cast<std::size_t>(std::llround(f * static_cast<double>(x.size())));
      const auto offset = m >= x.size() ? 0 : static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(x.size() - m)));
      return partial_erase(x, f, offset, rng);
    }
    case Kind::speed_adjust: return speed_adjust(x, draw(rng, r));
    case Kind::add_noise: return add_noise(x, draw(rng, r), rng);
    case Kind::hpss:
      return hpss(x, std::bernoulli_distribution(0.5)(rng) ? HpssBranch::harmonic : HpssBranch::percussive);
    case Kind::bitwise_downsample: return bitwise_downsample(x, static_cast<int>(draw_int(rng, r)));
    case Kind::samplerate_downsample: return samplerate_downsample(x, static_cast<int>(draw_int(rng, r)));
  }
  return {x.begin(), x.end()};
}

Signal apply_pipeline(std::span<const float> x, std::span<const AugmentSpec> specs, Rng& rng) {
  Signal y(x.begin(), x.end());
  for (const auto& spec : specs) {
    if (spec.probability < 0.0 || spec.probability > 1.0)
      throw ConfigError("augment: probability must be in [0, 1]");
    if (!std::bernoulli_distribution(spec.probability)(rng)) continue;
    y = apply_random(spec.kind, y, rng, spec.range);
  }
  return y;
}

}  // namespace tinysound::augment
