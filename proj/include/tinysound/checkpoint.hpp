#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tinysound/model.hpp"

namespace tinysound {

/// Adam moments aligned with ModelParams::tensors (empty for non-learnable).
struct OptState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptState zeros_like(const ModelParams& params);
  bool operator==(const OptState&) const = default;
};

struct Checkpoint {
  ModelParams params;
  std::optional<OptState> opt;
  std::uint64_t step = 0;
  std::uint32_t epoch = 0;
  /// Free-form key/value pairs: class names, feature pipeline, metrics.
  std::map<std::string, std::string> metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "TSCK" layout: magic, u32 version, config block, metadata, tensor table
/// (name, dims, f32 payload), optimizer block, u64 step, u32 epoch.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tinysound
