#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinysound/common.hpp"

namespace tinysound {

inline constexpr int kTargetSampleRate = 44100;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kTargetSampleRate;
  std::optional<int> label;
  std::string source_id;

  std::size_t size() const { return samples.size(); }
  /// Throws ConfigError if the rate is non-positive or any sample is non-finite.
  void validate() const;
};

enum class WavEncoding { pcm16, float32 };

/// Decodes a RIFF/WAVE byte buffer. PCM16 is scaled by 1/32768; stereo is
/// mixed down by the channel mean. The sample rate is kept as stored.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);
AudioClip read_wav(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_wav(const AudioClip& clip,
                                     WavEncoding encoding = WavEncoding::pcm16,
                                     int channels = 1);
void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               WavEncoding encoding = WavEncoding::pcm16);

/// Kaiser-windowed sinc resampling by an arbitrary ratio (output rate / input
/// rate). Output length is round(n * ratio).
std::vector<float> resample_ratio(std::span<const float> x, double ratio);
AudioClip resample(const AudioClip& clip, int target_rate);

enum class ManifestLayout { csv_manifest, folder_per_class };

struct ManifestEntry {
  std::filesystem::path path;
  int class_index = 0;
  std::string class_name;
  int fold = -1;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  ManifestLayout layout = ManifestLayout::folder_per_class;
  std::vector<std::string> warnings;

  bool has_folds() const;
};

/// csv_manifest: root/meta/esc50.csv (or root/*.csv) with header
/// filename,fold,target,category; audio under root/audio/.
/// folder_per_class: root/<class>/*.wav.
DatasetManifest load_manifest(const std::filesystem::path& root, ManifestLayout layout);
ManifestLayout parse_layout(const std::string& name);

/// Contiguous n-sample window at a uniform offset; right zero-padded when the
/// clip is shorter than n.
AudioClip random_slice(const AudioClip& clip, std::size_t n_samples, Rng& rng);
/// Deterministic centered window, same padding rule.
AudioClip center_slice(const AudioClip& clip, std::size_t n_samples);
AudioClip slice_at(const AudioClip& clip, std::size_t offset, std::size_t n_samples);

/// Reads, mixes down and resamples to 44.1 kHz.
AudioClip load_clip(const ManifestEntry& entry);

}  // namespace tinysound
