#include "tinysound/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

namespace tinysound {

namespace fs = std::filesystem;

void AudioClip::validate() const {
  if (sample_rate <= 0) throw ConfigError("AudioClip: sample_rate must be positive");
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!std::isfinite(samples[i]))
      throw ConfigError("AudioClip: non-finite sample at index " + std::to_string(i));
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

// ---------------------------------------------------------------------------
// WAV

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::string offset_msg(std::size_t off, const std::string& what) {
  return "wav: " + what + " at offset " + std::to_string(off);
}

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.data(), bytes.size(), "wav");
  if (bytes.size() < 12) throw FormatError(offset_msg(0, "file shorter than RIFF header"));
  char id[4];
  r.get_bytes(id, 4);
  if (std::memcmp(id, "RIFF", 4) != 0) throw FormatError(offset_msg(0, "missing RIFF tag"));
  r.get<std::uint32_t>();
  r.get_bytes(id, 4);
  if (std::memcmp(id, "WAVE", 4) != 0) throw FormatError(offset_msg(8, "missing WAVE tag"));

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  while (r.remaining() >= 8) {
    const std::size_t chunk_off = r.pos();
    r.get_bytes(id, 4);
    const auto size = r.get<std::uint32_t>();
    const std::size_t body = r.pos();
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(offset_msg(chunk_off, "fmt chunk too small"));
      format = r.get<std::uint16_t>();
      channels = r.get<std::uint16_t>();
      rate = r.get<std::uint32_t>();
      r.get<std::uint32_t>();  // byte rate
      r.get<std::uint16_t>();  // block align
      bits = r.get<std::uint16_t>();
      if (format == kFormatExtensible && size >= 40) {
        r.get<std::uint16_t>();  // cbSize
        r.get<std::uint16_t>();  // valid bits
        r.get<std::uint32_t>();  // channel mask
        format = r.get<std::uint16_t>();  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      // Some writers leave the data size at 0 or 0xFFFFFFFF when streaming.
      const bool streamed = size == 0 || size == 0xFFFFFFFFu;
      if (!streamed && size > bytes.size() - body)
        throw FormatError(offset_msg(chunk_off, "data chunk truncated"));
      data_size = streamed ? bytes.size() - body : size;
      data = bytes.data() + body;
      if (streamed) break;
    }
    const std::size_t next = body + size + (size & 1u);
    if (next > bytes.size()) {
      if (data != nullptr) break;
      throw FormatError(offset_msg(chunk_off, "chunk extends past end of file"));
    }
    r.seek(next);
  }

  if (!have_fmt) throw FormatError(offset_msg(12, "no fmt chunk"));
  if (data == nullptr) throw FormatError(offset_msg(12, "no data chunk"));
  if (channels != 1 && channels != 2)
    throw FormatError("wav: unsupported channel count " + std::to_string(channels));
  if (rate == 0) throw FormatError(offset_msg(24, "zero sample rate"));

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    throw FormatError("wav: unsupported format (format tag " + std::to_string(format) +
                      ", " + std::to_string(bits) + " bits); PCM16 or float32 required");

  const std::size_t frame_bytes = std::size_t{channels} * (bits / 8);
  const std::size_t frames = data_size / frame_bytes;
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += std::isfinite(v) ? std::clamp(static_cast<double>(v), -1.0, 1.0) : 0.0;
      }
    }
    clip.samples[i] = static_cast<float>(acc / channels);
  }
  return clip;
}

AudioClip read_wav(const fs::path& path) {
  const auto bytes = read_file_bytes(path.string());
  try {
    AudioClip clip = decode_wav(bytes);
    clip.source_id = path.string();
    return clip;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip, WavEncoding encoding,
                                     int channels) {
  if (channels != 1 && channels != 2) throw ConfigError("encode_wav: 1 or 2 channels");
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  const auto data_size = static_cast<std::uint32_t>(clip.samples.size() * block);

  ByteWriter w;
  w.put_magic("RIFF");
  w.put<std::uint32_t>(36 + data_size);
  w.put_magic("WAVE");
  w.put_magic("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate) * block);
  w.put<std::uint16_t>(block);
  w.put<std::uint16_t>(bits);
  w.put_magic("data");
  w.put<std::uint32_t>(data_size);
  for (float s : clip.samples) {
    for (int c = 0; c < channels; ++c) {
      if (encoding == WavEncoding::pcm16) {
        const double scaled = std::round(static_cast<double>(s) * 32768.0);
        w.put<std::int16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0)));
      } else {
        w.put<float>(s);
      }
    }
  }
  return w.take();
}

void write_wav(const fs::path& path, const AudioClip& clip, WavEncoding encoding) {
  write_file_bytes(path.string(), encode_wav(clip, encoding));
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

constexpr int kTapsPerPhase = 32;
constexpr double kKaiserBeta = 8.6;
constexpr int kTableResolution = 512;  // kernel samples per unit of input time

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

// Windowed-sinc kernel sampled on a fine grid over [0, half_width] in units of
// the filter's own (cutoff-normalized) time axis.
const std::vector<double>& kernel_table() {
  static const std::vector<double> table = [] {
    const int half = kTapsPerPhase / 2;
    std::vector<double> t(static_cast<std::size_t>(half * kTableResolution + 2));
    const double i0b = bessel_i0(kKaiserBeta);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double u = static_cast<double>(i) / kTableResolution;
      if (u >= half) {
        t[i] = 0.0;
        continue;
      }
      const double r = u / half;
      const double win = bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / i0b;
      const double sinc = u == 0.0 ? 1.0 : std::sin(std::numbers::pi * u) / (std::numbers::pi * u);
      t[i] = sinc * win;
    }
    return t;
  }();
  return table;
}

double kernel_at(double u) {
  const auto& t = kernel_table();
  u = std::abs(u) * kTableResolution;
  const auto i = static_cast<std::size_t>(u);
  if (i + 1 >= t.size()) return 0.0;
  const double frac = u - static_cast<double>(i);
  return t[i] + (t[i + 1] - t[i]) * frac;
}

}  // namespace

std::vector<float> resample_ratio(std::span<const float> x, double ratio) {
  if (!(ratio > 0.0)) throw ConfigError("resample: ratio must be positive");
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * ratio));
  std::vector<float> y(n_out, 0.0f);
  if (x.empty()) return y;
  if (ratio == 1.0) {
    std::copy_n(x.begin(), std::min(n_out, x.size()), y.begin());
    return y;
  }
  // Downsampling lowers the cutoff and stretches the kernel to keep the tap
  // count per output phase.
  const double cutoff = std::min(1.0, ratio);
  const double half_width = (kTapsPerPhase / 2) / cutoff;
  const auto n = static_cast<long>(x.size());
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) / ratio;
    const long lo = static_cast<long>(std::ceil(t - half_width));
    const long hi = static_cast<long>(std::floor(t + half_width));
    double acc = 0.0, norm = 0.0;
    for (long k = lo; k <= hi; ++k) {
      const double w = kernel_at((t - static_cast<double>(k)) * cutoff);
      norm += w;
      if (k >= 0 && k < n) acc += w * x[static_cast<std::size_t>(k)];
    }
    y[i] = static_cast<float>(norm != 0.0 ? acc / norm : 0.0);
  }
  return y;
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  clip.validate();
  if (target_rate <= 0) throw ConfigError("resample: target_rate must be positive");
  AudioClip out;
  out.label = clip.label;
  out.source_id = clip.source_id;
  out.sample_rate = target_rate;
  if (clip.sample_rate == target_rate) {
    out.samples = clip.samples;
  } else {
    out.samples = resample_ratio(clip.samples,
                                 static_cast<double>(target_rate) / clip.sample_rate);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

bool DatasetManifest::has_folds() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.fold >= 0; });
}

ManifestLayout parse_layout(const std::string& name) {
  if (name == "csv" || name == "csv_manifest") return ManifestLayout::csv_manifest;
  if (name == "folder" || name == "folder_per_class") return ManifestLayout::folder_per_class;
  throw ConfigError("unknown manifest layout '" + name + "' (expected csv or folder)");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool is_wav(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

fs::path find_csv(const fs::path& root) {
  if (fs::is_regular_file(root)) return root;
  if (fs::exists(root / "meta" / "esc50.csv")) return root / "meta" / "esc50.csv";
  std::vector<fs::path> csvs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
  std::sort(csvs.begin(), csvs.end());
  return csvs.empty() ? fs::path{} : csvs.front();
}

DatasetManifest load_csv_manifest(const fs::path& root) {
  DatasetManifest m;
  m.layout = ManifestLayout::csv_manifest;
  const fs::path csv = find_csv(root);
  if (csv.empty()) return m;
  const fs::path base = fs::is_regular_file(root) ? root.parent_path() : root;
  const fs::path audio_dir = fs::is_directory(base / "audio")           ? base / "audio"
                             : fs::is_directory(base.parent_path() / "audio") && csv.parent_path().filename() == "meta"
                                 ? base.parent_path() / "audio"
                                 : base;

  std::ifstream in(csv);
  std::string line;
  if (!std::getline(in, line)) return m;
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name, bool required) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    if (required) throw FormatError(csv.string() + ": header lacks column '" + name + "'");
    return -1;
  };
  const int c_file = col("filename", true);
  const int c_fold = col("fold", false);
  const int c_target = col("target", true);
  const int c_cat = col("category", true);

  std::map<int, std::string> names;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const auto need = static_cast<std::size_t>(std::max({c_file, c_fold, c_target, c_cat}));
    if (cells.size() <= need)
      throw FormatError(csv.string() + ": row " + std::to_string(row) + " has too few columns");
    ManifestEntry e;
    try {
      e.class_index = std::stoi(cells[static_cast<std::size_t>(c_target)]);
      e.fold = c_fold >= 0 && !cells[static_cast<std::size_t>(c_fold)].empty()
                   ? std::stoi(cells[static_cast<std::size_t>(c_fold)])
                   : -1;
    } catch (const std::exception&) {
      throw FormatError(csv.string() + ": row " + std::to_string(row) + " has a non-integer fold/target");
    }
    if (e.class_index < 0)
      throw FormatError(csv.string() + ": row " + std::to_string(row) + " has a negative target");
    e.class_name = cells[static_cast<std::size_t>(c_cat)];
    e.path = audio_dir / cells[static_cast<std::size_t>(c_file)];
    if (!fs::exists(e.path))
      throw FormatError(csv.string() + ": row " + std::to_string(row) + " references missing file " + e.path.string());
    auto [it, inserted] = names.emplace(e.class_index, e.class_name);
    if (!inserted && it->second != e.class_name)
      throw FormatError(csv.string() + ": row " + std::to_string(row) + " maps target " +
                        std::to_string(e.class_index) + " to a second category");
    m.entries.push_back(std::move(e));
  }
  // Class names are indexed by target so indices stay meaningful.
  const int n_classes = names.empty() ? 0 : names.rbegin()->first + 1;
  m.class_names.resize(static_cast<std::size_t>(n_classes));
  for (const auto& [idx, name] : names) m.class_names[static_cast<std::size_t>(idx)] = name;
  for (int i = 0; i < n_classes; ++i)
    if (m.class_names[static_cast<std::size_t>(i)].empty()) {
      m.class_names[static_cast<std::size_t>(i)] = "class_" + std::to_string(i);
      m.warnings.push_back("target " + std::to_string(i) + " has no entries");
    }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  return m;
}

DatasetManifest load_folder_manifest(const fs::path& root) {
  DatasetManifest m;
  m.layout = ManifestLayout::folder_per_class;
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  std::sort(classes.begin(), classes.end());
  m.class_names = classes;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::size_t count = 0;
    for (const auto& f : fs::directory_iterator(root / classes[c])) {
      if (!f.is_regular_file() || !is_wav(f.path())) continue;
      m.entries.push_back({f.path(), static_cast<int>(c), classes[c], -1});
      ++count;
    }
    if (count == 0) m.warnings.push_back("class folder '" + classes[c] + "' has no wav files");
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, ManifestLayout layout) {
  if (!fs::exists(root)) throw std::runtime_error("manifest root does not exist: " + root.string());
  DatasetManifest m = layout == ManifestLayout::csv_manifest ? load_csv_manifest(root)
                                                              : load_folder_manifest(root);
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  return m;
}

// ---------------------------------------------------------------------------
// Slicing

AudioClip slice_at(const AudioClip& clip, std::size_t offset, std::size_t n_samples) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.label = clip.label;
  out.source_id = clip.source_id;
  out.samples.assign(n_samples, 0.0f);
  if (offset < clip.samples.size()) {
    const std::size_t n = std::min(n_samples, clip.samples.size() - offset);
    std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset), n, out.samples.begin());
  }
  return out;
}

AudioClip random_slice(const AudioClip& clip, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw ConfigError("random_slice: n_samples must be positive");
  std::size_t offset = 0;
  if (clip.samples.size() > n_samples)
    offset = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(clip.samples.size() - n_samples)));
  return slice_at(clip, offset, n_samples);
}

AudioClip center_slice(const AudioClip& clip, std::size_t n_samples) {
  if (n_samples == 0) throw ConfigError("center_slice: n_samples must be positive");
  const std::size_t offset = clip.samples.size() > n_samples ? (clip.samples.size() - n_samples) / 2 : 0;
  return slice_at(clip, offset, n_samples);
}

AudioClip load_clip(const ManifestEntry& entry) {
  AudioClip clip = read_wav(entry.path);
  clip.label = entry.class_index;
  if (clip.sample_rate != kTargetSampleRate) clip = resample(clip, kTargetSampleRate);
  return clip;
}

}  // namespace tinysound
