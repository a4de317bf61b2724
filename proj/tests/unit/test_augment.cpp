#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "fixtures.hpp"
#include "oracle_data.hpp"
#include "tinysound/augment.hpp"
#include "tinysound/fft.hpp"

using namespace tinysound;
using namespace tinysound::augment;

namespace {

std::vector<float> sine(double hz, std::size_t n, double amp = 0.5) {
  std::vector<float> s(n);
  for (std::size_t i = 0; i < n; ++i)
    s[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / 44100.0));
  return s;
}

double peak_hz(const std::vector<float>& x) {
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

double energy(std::span<const float> x) {
  double e = 0.0;
  for (float v : x) e += static_cast<double>(v) * v;
  return e;
}

// |H(e^jw)| of the cascaded sections.
double response(const std::vector<std::array<double, 5>>& sos, double w) {
  const std::complex<double> z1 = std::polar(1.0, -w), z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sos) h *= (s[0] + s[1] * z1 + s[2] * z2) / (1.0 + s[3] * z1 + s[4] * z2);
  return std::abs(h);
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("every transform preserves length and is deterministic") {
  const auto x = fixtures::test_signal(22050);
  for (Kind k : kAllKinds) {
    CAPTURE(to_string(k));
    Rng a(99), b(99);
    const auto ya = apply_random(k, x, a);
    const auto yb = apply_random(k, x, b);
    CHECK(ya.size() == x.size());
    CHECK(ya == yb);
    for (float v : ya) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("kind names round trip") {
  for (Kind k : kAllKinds) CHECK(parse_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_kind("reverb"), ConfigError);
}

TEST_CASE("echo index identity") {
  const auto x = fixtures::test_signal(5000);
  const std::size_t d = 1234;
  const auto y = echo(x, d);
  for (std::size_t i = 0; i < d; ++i) REQUIRE(y[i] == x[i]);
  for (std::size_t i = d; i < x.size(); ++i) REQUIRE(y[i] == x[i] + x[i - d]);
}

TEST_CASE("amplitude clip and amplify") {
  const auto x = fixtures::test_signal(5000);
  const double m = energy(x) > 0 ? *std::max_element(x.begin(), x.end(), [](float a, float b) { return std::abs(a) < std::abs(b); }) : 0.0;
  const auto y = amplitude_clip(x, 0.8);
  for (float v : y) CHECK(std::abs(v) <= std::abs(m) * 0.8 + 1e-6);
  const auto g = amplify(x, 1.5);
  for (std::size_t i = 0; i < x.size(); i += 97) CHECK(g[i] == doctest::Approx(1.5 * x[i]));
}

TEST_CASE("butterworth lowpass matches reference filter") {
  const auto x = fixtures::test_signal(4096);
  for (auto [c, ref] : {std::pair{0.05, &oracle::kLowpass05[0]}, std::pair{0.2, &oracle::kLowpass20[0]}}) {
    const auto y = lowpass(x, c);
    for (std::size_t i = 0, j = 0; i < y.size(); i += 17, ++j) REQUIRE(y[i] == doctest::Approx(ref[j]).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("lowpass -3 dB point within 5% of the cutoff") {
  for (double c : {0.05, 0.1, 0.2, 0.45}) {
    const auto sos = butterworth_lowpass_sections(5, c);
    CHECK(response(sos, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    // bisect for |H| = 1/sqrt(2)
    double lo = 1e-6, hi = std::numbers::pi - 1e-6;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (response(sos, mid) > std::sqrt(0.5) ? lo : hi) = mid;
    }
    const double found = lo / std::numbers::pi;
    CHECK(std::abs(found - c) / c < 0.05);
  }
  CHECK_THROWS_AS(butterworth_lowpass_sections(5, 1.2), ConfigError);
}

TEST_CASE("phase vocoder matches reference stretch") {
  const auto x = fixtures::test_signal(8192);
  const auto fast = time_stretch(x, 1.25);
  const auto slow = time_stretch(x, 0.8);
  REQUIRE(fast.size() == static_cast<std::size_t>(oracle::kStretchFastLen[0]));
  REQUIRE(slow.size() == static_cast<std::size_t>(oracle::kStretchSlowLen[0]));
  for (std::size_t i = 0, j = 0; i < fast.size(); i += 37, ++j) CHECK(fast[i] == doctest::Approx(oracle::kStretchFast[j]).scale(1.0).epsilon(1e-4));
  for (std::size_t i = 0, j = 0; i < slow.size(); i += 37, ++j) CHECK(slow[i] == doctest::Approx(oracle::kStretchSlow[j]).scale(1.0).epsilon(1e-4));
}

TEST_CASE("speed adjust at rate 1 is the identity") {
  const auto x = fixtures::test_signal(10000);
  const auto y = speed_adjust(x, 1.0);
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
  CHECK(std::sqrt(se / 10000.0) < 1e-4);
}

TEST_CASE("pitch shift moves the spectral peak by the semitone ratio") {
  for (double st : {2.0, 4.0, -3.0}) {
    CAPTURE(st);
    const auto y = pitch_shift(sine(1000.0, 44100), st);
    REQUIRE(y.size() == 44100);
    // analyse the steady middle to keep edge effects out
    std::vector<float> mid(y.begin() + 11025, y.begin() + 33075);
    const double expect = 1000.0 * std::pow(2.0, st / 12.0);
    CHECK(std::abs(peak_hz(mid) - expect) / expect < 0.01);
  }
  CHECK(peak_hz(sine(1000.0, 22050)) == doctest::Approx(1000.0).epsilon(0.01));
}

TEST_CASE("hpss masks match median-filter reference") {
  const std::size_t frames = 23, bins = 19;
  const std::vector<double> mag(std::begin(oracle::kHpssMag), std::end(oracle::kHpssMag));
  for (auto [k, ref] : {std::pair{5, &oracle::kHpssHarm5[0]}, std::pair{17, &oracle::kHpssHarm17[0]}}) {
    const auto m = hpss_masks(mag, frames, bins, k);
    for (std::size_t i = 0; i < mag.size(); ++i) {
      REQUIRE(m.harmonic[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      REQUIRE(m.harmonic[i] + m.percussive[i] == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("hpss energy split") {
  // components add back to the input
  const auto x = fixtures::test_signal(22050);
  const auto h = hpss(x, HpssBranch::harmonic), p = hpss(x, HpssBranch::percussive);
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += std::pow(x[i] - h[i] - p[i], 2);
  CHECK(std::sqrt(se / 22050.0) < 1e-4);

  const auto tone = sine(880.0, 22050);
  const double th = energy(hpss(tone, HpssBranch::harmonic)), tp = energy(hpss(tone, HpssBranch::percussive));
  CHECK(th / (th + tp) > 0.9);

  std::vector<float> clicks(22050, 0.0f);
  for (std::size_t i = 1000; i < clicks.size(); i += 4410) clicks[i] = 0.9f;
  const double ch = energy(hpss(clicks, HpssBranch::harmonic)), cp = energy(hpss(clicks, HpssBranch::percussive));
  CHECK(cp / (ch + cp) > 0.9);
}

TEST_CASE("partial erase only touches its segment") {
  const auto x = fixtures::test_signal(10000);
  Rng rng(5);
  const auto y = partial_erase(x, 0.2, 3000, rng);
  for (std::size_t i = 0; i < 3000; ++i) REQUIRE(y[i] == x[i]);
  for (std::size_t i = 5000; i < x.size(); ++i) REQUIRE(y[i] == x[i]);
  const std::span<const float> seg(y.data() + 3000, 2000);
  double mean = 0.0, sd = 0.0, sx = 0.0, mx = 0.0;
  for (float v : seg) mean += v;
  mean /= 2000.0;
  for (float v : seg) sd += (v - mean) * (v - mean);
  for (float v : x) mx += v;
  mx /= 10000.0;
  for (float v : x) sx += (v - mx) * (v - mx);
  CHECK(std::sqrt(sd / 2000.0) == doctest::Approx(std::sqrt(sx / 10000.0)).epsilon(0.1));
}

TEST_CASE("additive noise has the requested deviation") {
  std::vector<float> x(50000, 0.0f);
  x[0] = 1.0f;
  Rng rng(8);
  const auto y = add_noise(x, 0.05, rng);
  double sd = 0.0;
  for (std::size_t i = 1; i < y.size(); ++i) sd += static_cast<double>(y[i]) * y[i];
  CHECK(std::sqrt(sd / 49999.0) == doctest::Approx(0.05).epsilon(0.03));
}

TEST_CASE("bit and sample-rate reduction") {
  const auto x = fixtures::test_signal(3000);
  const auto b = bitwise_downsample(x, 50);
  for (std::size_t i = 0; i < x.size(); ++i) {
    REQUIRE(b[i] <= x[i] + 1e-6f);
    REQUIRE(x[i] - b[i] < 1.0f / 50 + 1e-6f);
    REQUIRE(std::abs(b[i] * 50 - std::round(b[i] * 50)) < 1e-4);
  }
  const auto s = samplerate_downsample(x, 4);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(s[i] == x[i - i % 4]);
  CHECK(samplerate_downsample(x, 1) == std::vector<float>(x.begin(), x.end()));
}

TEST_CASE("pipeline respects probabilities") {
  const auto x = fixtures::test_signal(4000);
  std::vector<AugmentSpec> never{{Kind::amplify, 0.0, std::pair{2.0, 2.0}}};
  Rng rng(1);
  CHECK(apply_pipeline(x, never, rng) == std::vector<float>(x.begin(), x.end()));
  std::vector<AugmentSpec> always{{Kind::amplify, 1.0, std::pair{2.0, 2.0}}};
  const auto y = apply_pipeline(x, always, rng);
  for (std::size_t i = 0; i < x.size(); i += 31) CHECK(y[i] == doctest::Approx(2.0 * x[i]));
  std::vector<AugmentSpec> bad{{Kind::amplify, 1.5, std::nullopt}};
  CHECK_THROWS_AS(apply_pipeline(x, bad, rng), ConfigError);
}

}
