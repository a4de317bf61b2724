#include "tinysound/tokenizer.hpp"

#include <algorithm>
#include <cmath>

namespace tinysound {

namespace {

std::string key_of(std::span<const std::uint8_t> c) {
  return {reinterpret_cast<const char*>(c.data()), c.size()};
}

// Writes the window starting at `start` (shifted in relative mode) into `out`.
void curve_at(std::span<const std::uint8_t> q, std::size_t start, const CurveSpec& spec,
              std::span<std::uint8_t> out) {
  std::copy_n(q.begin() + static_cast<std::ptrdiff_t>(start), spec.curve_len, out.begin());
  if (spec.mode == CurveMode::relative) {
    const auto lo = *std::min_element(out.begin(), out.end());
    for (auto& v : out) v = static_cast<std::uint8_t>(v - lo);
  }
}

}  // namespace

void CurveSpec::validate() const {
  if (curve_len < 1) throw ConfigError("CurveSpec: curve_len must be >= 1");
  if (resolution < 2 || resolution > 256) throw ConfigError("CurveSpec: resolution must be in [2, 256]");
  if (top_k < 1) throw ConfigError("CurveSpec: top_k must be >= 1");
}

std::vector<std::uint8_t> quantize_signal(std::span<const float> x, std::uint32_t resolution) {
  std::vector<std::uint8_t> q(x.size());
  const double r = resolution;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(static_cast<double>(x[i]), -1.0, 1.0);
    const double level = std::min(std::floor((v + 1.0) / 2.0 * r), r - 1.0);
    q[i] = static_cast<std::uint8_t>(level);
  }
  return q;
}

Curve relative_shift(std::span<const std::uint8_t> span) {
  if (span.empty()) throw ConfigError("relative_shift: empty span");
  const auto lo = *std::min_element(span.begin(), span.end());
  Curve out(span.begin(), span.end());
  for (auto& v : out) v = static_cast<std::uint8_t>(v - lo);
  return out;
}

CurveCounter::CurveCounter(CurveSpec spec) : spec_(spec) { spec_.validate(); }

void CurveCounter::add_clip(std::span<const float> samples) {
  const auto q = quantize_signal(samples, spec_.resolution);
  const std::size_t len = spec_.curve_len;
  if (q.size() < len) return;
  Curve buf(len);
  for (std::size_t i = 0; i + len <= q.size(); ++i) {
    curve_at(q, i, spec_, buf);
    ++counts_[key_of(buf)];
    ++total_;
  }
}

void CurveCounter::merge(const CurveCounter& other) {
  for (const auto& [k, v] : other.counts_) counts_[k] += v;
  total_ += other.total_;
}

CurveVocab::CurveVocab(CurveSpec spec, std::vector<Curve> curves_by_rank)
    : spec_(spec), curves_(std::move(curves_by_rank)) {
  spec_.validate();
  if (curves_.size() > spec_.top_k) throw ConfigError("CurveVocab: more curves than top_k");
  ids_.reserve(curves_.size());
  for (std::size_t i = 0; i < curves_.size(); ++i) {
    const auto& c = curves_[i];
    if (c.size() != spec_.curve_len) throw ConfigError("CurveVocab: curve length mismatch");
    for (auto v : c)
      if (v >= spec_.resolution) throw ConfigError("CurveVocab: curve level out of range");
    if (!ids_.emplace(key_of(c), static_cast<TokenId>(i) + kFirstCurveToken).second)
      throw ConfigError("CurveVocab: duplicate curve");
  }
}

TokenId CurveVocab::lookup(std::span<const std::uint8_t> curve) const {
  const auto it = ids_.find(key_of(curve));
  return it == ids_.end() ? kUnkToken : it->second;
}

std::vector<std::uint8_t> CurveVocab::encode() const {
  ByteWriter w;
  w.put_magic("TSCV");
  w.put<std::uint32_t>(spec_.curve_len);
  w.put<std::uint32_t>(spec_.resolution);
  w.put<std::uint32_t>(spec_.top_k);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(spec_.mode));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(curves_.size()));
  for (const auto& c : curves_) w.put_bytes(c.data(), c.size());
  return w.take();
}

CurveVocab CurveVocab::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.data(), bytes.size(), "curve vocab");
  r.expect_magic("TSCV");
  CurveSpec spec;
  spec.curve_len = r.get<std::uint32_t>();
  spec.resolution = r.get<std::uint32_t>();
  spec.top_k = r.get<std::uint32_t>();
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw FormatError("curve vocab: unknown mode " + std::to_string(mode));
  spec.mode = static_cast<CurveMode>(mode);
  spec.validate();
  const auto count = r.get<std::uint32_t>();
  std::vector<Curve> curves(count, Curve(spec.curve_len));
  for (auto& c : curves) r.get_bytes(c.data(), c.size());
  return CurveVocab(spec, std::move(curves));
}

CurveVocab vocab_from_counts(const CurveCounter& counter) {
  using Item = std::pair<const std::string*, std::uint64_t>;
  std::vector<Item> items;
  items.reserve(counter.counts().size());
  for (const auto& [k, v] : counter.counts()) items.emplace_back(&k, v);
  auto better = [](const Item& a, const Item& b) {
    if (a.second != b.second) return a.second > b.second;
    return *a.first < *b.first;
  };
  const std::size_t keep = std::min<std::size_t>(items.size(), counter.spec().top_k);
  std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(keep), items.end(), better);
  std::vector<Curve> curves;
  curves.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) curves.emplace_back(items[i].first->begin(), items[i].first->end());
  return CurveVocab(counter.spec(), std::move(curves));
}

VocabBuild build_curve_vocab(std::span<const AudioClip> corpus, const CurveSpec& spec) {
  if (corpus.empty()) throw ConfigError("build_curve_vocab: empty corpus");
  CurveCounter counter(spec);
  for (const auto& clip : corpus) counter.add_clip(clip.samples);
  VocabBuild out{vocab_from_counts(counter), {}};
  out.stats = coverage(out.vocab, corpus);
  return out;
}

std::vector<TokenId> tokenize(std::span<const float> samples, const CurveVocab& vocab) {
  const auto& spec = vocab.spec();
  const auto q = quantize_signal(samples, spec.resolution);
  const std::size_t len = spec.curve_len;
  std::vector<TokenId> ids;
  ids.reserve(1 + q.size() / len);
  ids.push_back(kClsToken);
  Curve buf(len);
  for (std::size_t i = 0; i + len <= q.size(); i += len) {
    curve_at(q, i, spec, buf);
    ids.push_back(vocab.lookup(buf));
  }
  return ids;
}

CoverageStats coverage(const CurveVocab& vocab, std::span<const AudioClip> corpus) {
  CurveCounter counter(vocab.spec());
  std::uint64_t tokens = 0, known_tokens = 0;
  for (const auto& clip : corpus) {
    counter.add_clip(clip.samples);
    const auto ids = tokenize(clip.samples, vocab);
    tokens += ids.size() - 1;
    known_tokens += static_cast<std::uint64_t>(
        std::count_if(ids.begin() + 1, ids.end(), [](TokenId t) { return t != kUnkToken; }));
  }
  CoverageStats s;
  s.distinct_curves = counter.distinct();
  std::uint64_t covered = 0, covered_distinct = 0;
  for (const auto& [k, v] : counter.counts()) {
    const std::span<const std::uint8_t> c(reinterpret_cast<const std::uint8_t*>(k.data()), k.size());
    if (vocab.lookup(c) != kUnkToken) {
      covered += v;
      ++covered_distinct;
    }
  }
  s.vocab_coverage = counter.total() ? static_cast<double>(covered) / static_cast<double>(counter.total()) : 1.0;
  s.distinct_coverage = s.distinct_curves ? static_cast<double>(covered_distinct) / static_cast<double>(s.distinct_curves) : 1.0;
  s.token_coverage = tokens ? static_cast<double>(known_tokens) / static_cast<double>(tokens) : 1.0;
  return s;
}

}  // namespace tinysound
