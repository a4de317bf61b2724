#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "tinysound/audio_io.hpp"
#include "tinysound/model.hpp"

namespace fixtures {

// Same definitions as tests/oracles/make_oracles.py.
inline std::vector<float> test_signal(std::size_t n) {
  std::vector<float> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / 44100.0;
    s[i] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 440 * t) +
                              0.3 * std::sin(2 * std::numbers::pi * 3150.5 * t + 0.3) +
                              0.15 * std::sin(2 * std::numbers::pi * (97 + 2000 * t) * t));
  }
  return s;
}

inline void fill_params(tinysound::ModelParams& p) {
  auto& ts = p.tensors();
  for (std::size_t ti = 0; ti < ts.size(); ++ti) {
    const auto& name = ts[ti].name;
    for (std::size_t j = 0; j < ts[ti].data.size(); ++j) {
      const double base = std::sin(0.7 * static_cast<double>(j) + 0.3 * static_cast<double>(ti) + 0.1);
      double v;
      if (name.ends_with("running_var")) v = 1.0 + 0.5 * base * base;
      else if (name.ends_with("running_mean")) v = 0.1 * base;
      else if (name.ends_with(".gamma")) v = 1.0 + 0.1 * base;
      else if (name.starts_with("embedding.")) v = 0.5 * base;
      else v = 0.05 * base;
      ts[ti].data[j] = static_cast<float>(v);
    }
  }
}

inline std::vector<float> cont_input(std::size_t B, std::size_t L, std::size_t F) {
  std::vector<float> x(B * L * F);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto b = static_cast<double>(i / (L * F));
    const auto l = static_cast<double>((i / F) % L);
    x[i] = static_cast<float>(std::sin(0.37 * static_cast<double>(i) + 0.2) + 0.1 * b * l);
  }
  return x;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("tinysound_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
