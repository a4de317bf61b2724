#include "tinysound/checkpoint.hpp"

namespace tinysound {

OptState OptState::zeros_like(const ModelParams& params) {
  OptState s;
  for (const auto& t : params.tensors()) {
    const std::size_t n = t.learnable ? t.size() : 0;
    s.m.emplace_back(n, 0.0f);
    s.v.emplace_back(n, 0.0f);
  }
  return s;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.put_magic("TSCK");
  w.put<std::uint32_t>(kCheckpointVersion);
  write_config(w, ck.params.config());

  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.metadata.size()));
  for (const auto& [k, v] : ck.metadata) {
    w.put_string(k);
    w.put_string(v);
  }

  const auto& tensors = ck.params.tensors();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.put_string(t.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(t.data.data(), t.data.size() * sizeof(float));
  }

  w.put<std::uint8_t>(ck.opt ? 1 : 0);
  if (ck.opt) {
    const auto& o = *ck.opt;
    w.put<std::uint64_t>(o.step);
    w.put<double>(o.beta1);
    w.put<double>(o.beta2);
    w.put<double>(o.eps);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      w.put_bytes(o.m[i].data(), o.m[i].size() * sizeof(float));
      w.put_bytes(o.v[i].data(), o.v[i].size() * sizeof(float));
    }
  }
  w.put<std::uint64_t>(ck.step);
  w.put<std::uint32_t>(ck.epoch);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  r.expect_magic("TSCK");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const ModelConfig cfg = read_config(r);
  Checkpoint ck{ModelParams(cfg), std::nullopt, 0, 0, {}};

  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string();
    ck.metadata[k] = r.get_string();
  }

  auto& tensors = ck.params.tensors();
  const auto n_tensors = r.get<std::uint32_t>();
  if (n_tensors != tensors.size())
    throw FormatError("checkpoint: tensor count " + std::to_string(n_tensors) +
                      " does not match config (" + std::to_string(tensors.size()) + ")");
  for (auto& t : tensors) {
    const auto name = r.get_string();
    if (name != t.name) throw FormatError("checkpoint: expected tensor " + t.name + ", found " + name);
    const auto nd = r.get<std::uint8_t>();
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(r.get<std::uint32_t>());
    if (shape != t.shape) throw FormatError("checkpoint: shape mismatch for " + name);
    r.get_bytes(t.data.data(), t.data.size() * sizeof(float));
  }

  if (r.get<std::uint8_t>() != 0) {
    OptState o = OptState::zeros_like(ck.params);
    o.step = r.get<std::uint64_t>();
    o.beta1 = r.get<double>();
    o.beta2 = r.get<double>();
    o.eps = r.get<double>();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      r.get_bytes(o.m[i].data(), o.m[i].size() * sizeof(float));
      r.get_bytes(o.v[i].data(), o.v[i].size() * sizeof(float));
    }
    ck.opt = std::move(o);
  }
  ck.step = r.get<std::uint64_t>();
  ck.epoch = r.get<std::uint32_t>();
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after epoch counter");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace tinysound
