#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinysound/audio_io.hpp"

namespace tinysound {

enum class CurveMode : std::uint8_t { absolute = 0, relative = 1 };

struct CurveSpec {
  std::uint32_t curve_len = 8;
  std::uint32_t resolution = 64;
  std::uint32_t top_k = 50'000;
  CurveMode mode = CurveMode::absolute;

  void validate() const;
};

using Curve = std::vector<std::uint8_t>;
using TokenId = std::int32_t;

inline constexpr TokenId kUnkToken = 0;
inline constexpr TokenId kPadToken = 1;
inline constexpr TokenId kClsToken = 2;
inline constexpr TokenId kFirstCurveToken = 3;

/// Occurrence counts of curves; merged by addition.
class CurveCounter {
 public:
  explicit CurveCounter(CurveSpec spec);
  /// Slides the curve window over the quantized clip with stride 1.
  void add_clip(std::span<const float> samples);
  void merge(const CurveCounter& other);

  const CurveSpec& spec() const { return spec_; }
  std::size_t distinct() const { return counts_.size(); }
  std::uint64_t total() const { return total_; }
  const std::unordered_map<std::string, std::uint64_t>& counts() const { return counts_; }

 private:
  CurveSpec spec_;
  std::unordered_map<std::string, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct CoverageStats {
  /// Fraction of stride-1 curve occurrences whose curve is in the vocabulary.
  double vocab_coverage = 0.0;
  /// Fraction of stride-L tokens (CLS excluded) that are not UNK.
  double token_coverage = 0.0;
  /// Fraction of distinct observed curves present in the vocabulary.
  double distinct_coverage = 0.0;
  std::uint64_t distinct_curves = 0;
};

class CurveVocab {
 public:
  CurveVocab() = default;
  CurveVocab(CurveSpec spec, std::vector<Curve> curves_by_rank);

  const CurveSpec& spec() const { return spec_; }
  const std::vector<Curve>& curves() const { return curves_; }
  /// Curves plus the three special tokens.
  std::size_t vocab_size() const { return curves_.size() + kFirstCurveToken; }
  TokenId lookup(std::span<const std::uint8_t> curve) const;

  std::vector<std::uint8_t> encode() const;
  static CurveVocab decode(std::span<const std::uint8_t> bytes);

 private:
  CurveSpec spec_;
  std::vector<Curve> curves_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// q = min(floor((x + 1) / 2 * R), R - 1) after clamping x to [-1, 1].
std::vector<std::uint8_t> quantize_signal(std::span<const float> x, std::uint32_t resolution);
/// Subtracts the span minimum from every element.
Curve relative_shift(std::span<const std::uint8_t> span);

struct VocabBuild {
  CurveVocab vocab;
  CoverageStats stats;
};

/// Ranks curves by descending count, ties broken lexicographically, keeps top_k.
VocabBuild build_curve_vocab(std::span<const AudioClip> corpus, const CurveSpec& spec);
CurveVocab vocab_from_counts(const CurveCounter& counter);

/// CLS followed by one token per non-overlapping window: 1 + floor(n / L) ids.
std::vector<TokenId> tokenize(std::span<const float> samples, const CurveVocab& vocab);
CoverageStats coverage(const CurveVocab& vocab, std::span<const AudioClip> corpus);

}  // namespace tinysound
