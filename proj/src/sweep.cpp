#include "tinysound/sweep.hpp"

#include <algorithm>
#include <numeric>

#include "tinysound/augment.hpp"
#include "tinysound/common.hpp"

namespace tinysound {

std::vector<SweepPoint> expand_grid(const KeyValueConfig& cfg, std::optional<std::size_t> budget,
                                    std::uint64_t seed) {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& axis : kSweepAxes) {
    auto values = cfg.get_list("sweep." + axis);
    if (!values.empty()) axes.emplace_back(axis, std::move(values));
  }
  for (const auto& [key, value] : cfg.values()) {
    if (!key.starts_with("sweep.")) continue;
    const auto axis = key.substr(6);
    if (std::find(kSweepAxes.begin(), kSweepAxes.end(), axis) == kSweepAxes.end())
      throw ConfigError("unknown sweep axis '" + axis + "'");
    if (cfg.get_list(key).empty()) throw ConfigError("sweep axis '" + axis + "' has no values");
  }
  if (axes.empty()) throw ConfigError("sweep grid is empty (no sweep.* keys)");

  std::size_t total = 1;
  for (const auto& a : axes) total *= a.second.size();
  std::vector<std::size_t> picks(total);
  std::iota(picks.begin(), picks.end(), 0);
  if (budget) {
    if (*budget == 0) throw ConfigError("sweep budget must be >= 1");
    if (*budget < total) {
      Rng rng(derive_seed(seed, 0x5eed));
      std::shuffle(picks.begin(), picks.end(), rng);
      picks.resize(*budget);
      std::sort(picks.begin(), picks.end());
    }
  }

  std::vector<SweepPoint> points;
  for (auto idx : picks) {
    SweepPoint p;
    p.index = idx;
    std::size_t rest = idx;
    for (auto a = axes.rbegin(); a != axes.rend(); ++a) {
      p.values.emplace_back(a->first, a->second[rest % a->second.size()]);
      rest /= a->second.size();
    }
    std::reverse(p.values.begin(), p.values.end());
    points.push_back(std::move(p));
  }
  return points;
}

KeyValueConfig apply_point(const KeyValueConfig& base, const SweepPoint& point) {
  KeyValueConfig cfg = base;
  for (const auto& [axis, value] : point.values) {
    if (axis == "n_mels") cfg.set("features.n_mels", value);
    else if (axis == "hop") cfg.set("features.hop", value);
    else if (axis == "layers") cfg.set("model.layers", value);
    else if (axis == "heads") cfg.set("model.heads", value);
    else if (axis == "window_samples") cfg.set("train.window_samples", value);
    else if (axis == "augment") cfg.set("augment.enabled", value);
  }
  return cfg;
}

}  // namespace tinysound
