#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinysound/config.hpp"

namespace tinysound {

/// Grid axes read from `sweep.<axis> = v1, v2, ...`.
inline const std::vector<std::string> kSweepAxes = {"n_mels", "hop", "layers", "heads",
                                                     "window_samples", "augment"};

struct SweepPoint {
  std::size_t index = 0;  // position in the full Cartesian expansion
  std::vector<std::pair<std::string, std::string>> values;  // axis, value
};

/// Cartesian expansion in axis order (last axis fastest). With a budget, a
/// seeded subset of that many points, kept in expansion order. Throws
/// ConfigError for an empty grid.
std::vector<SweepPoint> expand_grid(const KeyValueConfig& cfg, std::optional<std::size_t> budget,
                                    std::uint64_t seed);

/// Base config with the point's values written to the keys they control.
KeyValueConfig apply_point(const KeyValueConfig& base, const SweepPoint& point);

}  // namespace tinysound
