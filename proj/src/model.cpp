#include "tinysound/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tinysound/tokenizer.hpp"

namespace tinysound {

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("ModelConfig: " + m); };
  if (input_dim < 1) fail("input_dim must be >= 1");
  if (seq_len < 1) fail("seq_len must be >= 1");
  if (hidden < 1) fail("hidden must be >= 1");
  if (layers < 1) fail("layers must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (classes < 1) fail("classes must be >= 1");
  if (hidden % heads != 0)
    fail("hidden " + std::to_string(hidden) + " is not divisible by heads " + std::to_string(heads));
  if (ffn_dim != 4 * hidden) fail("ffn_dim must equal 4 * hidden");
  if (input_mode == InputMode::continuous && use_positional)
    fail("continuous inputs take no positional encoding");
  if (!(dropout >= 0.0f && dropout < 1.0f)) fail("dropout must be in [0, 1)");
}

ModelConfig ModelConfig::continuous(int input_dim, int seq_len, int hidden, int layers, int heads,
                                    int classes) {
  ModelConfig c;
  c.input_mode = InputMode::continuous;
  c.input_dim = input_dim;
  c.seq_len = seq_len;
  c.hidden = hidden;
  c.layers = layers;
  c.heads = heads;
  c.ffn_dim = 4 * hidden;
  c.classes = classes;
  c.use_positional = false;
  return c;
}

ModelConfig ModelConfig::tokens(int vocab_size, int seq_len, int hidden, int layers, int heads,
                                int classes) {
  ModelConfig c = continuous(vocab_size, seq_len, hidden, layers, heads, classes);
  c.input_mode = InputMode::tokens;
  c.use_positional = true;
  return c;
}

// ---------------------------------------------------------------------------
// Parameter layout

ModelParams::ModelParams(const ModelConfig& cfg) : config_(cfg) {
  cfg.validate();
  const int H = cfg.hidden, L = cfg.seq_len, F = cfg.input_dim;
  auto add = [&](std::string name, std::vector<int> shape, bool learnable = true) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    by_name_[name] = tensors_.size();
    tensors_.push_back({std::move(name), std::move(shape), std::vector<float>(n, 0.0f), learnable});
    return tensors_.size() - 1;
  };
  if (cfg.input_mode == InputMode::continuous) {
    slots_.bn_gamma = add("batch_norm.gamma", {L});
    slots_.bn_beta = add("batch_norm.beta", {L});
    slots_.bn_mean = add("batch_norm.running_mean", {L}, false);
    slots_.bn_var = add("batch_norm.running_var", {L}, false);
    slots_.map_w = add("mapping.weight", {H, F});
    slots_.map_b = add("mapping.bias", {H});
  } else {
    slots_.tok_emb = add("embedding.token", {F, H});
    if (cfg.use_positional) {
      slots_.pos_emb = add("embedding.position", {L, H});
      slots_.has_pos = true;
    }
  }
  slots_.seg_emb = add("embedding.segment", {2, H});
  slots_.emb_ln_g = add("embedding.norm.gamma", {H});
  slots_.emb_ln_b = add("embedding.norm.beta", {H});
  for (int b = 0; b < cfg.layer_blocks(); ++b) {
    const std::string p = "layer" + std::to_string(b) + ".";
    LayerSlots s{};
    s.q_w = add(p + "attn.query.weight", {H, H});
    s.q_b = add(p + "attn.query.bias", {H});
    s.k_w = add(p + "attn.key.weight", {H, H});
    s.k_b = add(p + "attn.key.bias", {H});
    s.v_w = add(p + "attn.value.weight", {H, H});
    s.v_b = add(p + "attn.value.bias", {H});
    s.o_w = add(p + "attn.output.weight", {H, H});
    s.o_b = add(p + "attn.output.bias", {H});
    s.attn_ln_g = add(p + "attn.norm.gamma", {H});
    s.attn_ln_b = add(p + "attn.norm.beta", {H});
    s.ffn_in_w = add(p + "ffn.in.weight", {cfg.ffn_dim, H});
    s.ffn_in_b = add(p + "ffn.in.bias", {cfg.ffn_dim});
    s.ffn_out_w = add(p + "ffn.out.weight", {H, cfg.ffn_dim});
    s.ffn_out_b = add(p + "ffn.out.bias", {H});
    s.ffn_ln_g = add(p + "ffn.norm.gamma", {H});
    s.ffn_ln_b = add(p + "ffn.norm.beta", {H});
    slots_.blocks.push_back(s);
  }
  slots_.pool_w = add("pooler.weight", {H, H});
  slots_.pool_b = add("pooler.bias", {H});
  slots_.cls_w = add("classifier.weight", {cfg.classes, H});
  slots_.cls_b = add("classifier.bias", {cfg.classes});
}

Tensor& ModelParams::get(const std::string& name) {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("no tensor named " + name);
  return tensors_[it->second];
}

const Tensor& ModelParams::get(const std::string& name) const {
  return const_cast<ModelParams*>(this)->get(name);
}

std::optional<std::size_t> ModelParams::find(const std::string& name) const {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t ModelParams::learnable_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_)
    if (t.learnable) n += t.size();
  return n;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (!(config_ == o.config_) || tensors_.size() != o.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name != o.tensors_[i].name || tensors_[i].shape != o.tensors_[i].shape ||
        tensors_[i].data != o.tensors_[i].data)
      return false;
  return true;
}

ModelParams init_model(const ModelConfig& cfg, Rng& rng) {
  ModelParams p(cfg);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto trunc_normal = [&] {
    for (;;) {
      const double v = normal(rng);
      if (std::abs(v) <= 0.04) return static_cast<float>(v);
    }
  };
  for (auto& t : p.tensors()) {
    const auto& n = t.name;
    auto ends_with = [&](std::string_view s) { return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0; };
    if (ends_with(".gamma") || ends_with("running_var")) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (ends_with(".weight") || n.rfind("embedding.", 0) == 0) {
      if (ends_with(".beta")) continue;
      for (auto& v : t.data) v = trunc_normal();
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Batches

Batch Batch::from_features(std::span<const FeatureMatrix> items) {
  Batch b;
  b.size = items.size();
  if (items.empty()) return b;
  const std::size_t per = items[0].rows * items[0].cols;
  b.features.reserve(per * items.size());
  for (const auto& f : items) {
    if (f.rows != items[0].rows || f.cols != items[0].cols)
      throw ConfigError("Batch: feature matrices have mismatched shapes");
    b.features.insert(b.features.end(), f.data.begin(), f.data.end());
  }
  return b;
}

Batch Batch::from_tokens(std::span<const std::vector<std::int32_t>> items, std::size_t seq_len) {
  Batch b;
  b.size = items.size();
  b.tokens.reserve(items.size() * seq_len);
  for (const auto& ids : items) {
    for (std::size_t i = 0; i < seq_len; ++i)
      b.tokens.push_back(i < ids.size() ? ids[i] : kPadToken);
  }
  return b;
}

Batch Batch::slice(std::size_t i, const ModelConfig& cfg) const {
  Batch one;
  one.size = 1;
  const auto L = static_cast<std::size_t>(cfg.seq_len);
  if (cfg.input_mode == InputMode::continuous) {
    const std::size_t per = L * static_cast<std::size_t>(cfg.input_dim);
    one.features.assign(features.begin() + static_cast<std::ptrdiff_t>(i * per),
                        features.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  } else {
    one.tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(i * L),
                      tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * L));
  }
  return one;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

constexpr double kLayerNormEps = 1e-12;
constexpr double kBatchNormEps = 1e-5;

// Parameters widened to double once per call.
struct Dense {
  std::vector<MatrixRM> t;

  explicit Dense(const ModelParams& p) {
    t.reserve(p.tensors().size());
    for (const auto& tensor : p.tensors()) {
      const auto rows = tensor.shape.size() == 2 ? tensor.shape[0] : 1;
      const auto cols = tensor.shape.size() == 2 ? tensor.shape[1] : tensor.shape[0];
      MatrixRM m(rows, cols);
      for (std::size_t i = 0; i < tensor.data.size(); ++i) m.data()[i] = tensor.data[i];
      t.push_back(std::move(m));
    }
  }
  const MatrixRM& operator[](std::size_t i) const { return t[i]; }
  RowVec row(std::size_t i) const { return t[i].row(0); }
};

struct LnCache {
  MatrixRM xhat;
  Vec rstd;
};

MatrixRM layer_norm(const MatrixRM& x, const RowVec& gamma, const RowVec& beta, LnCache* cache) {
  const auto n = x.cols();
  MatrixRM xhat(x.rows(), n);
  Vec rstd(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  MatrixRM y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

MatrixRM layer_norm_backward(const MatrixRM& dy, const LnCache& c, const RowVec& gamma,
                             std::vector<double>& dgamma, std::vector<double>& dbeta) {
  const auto n = static_cast<double>(dy.cols());
  for (Eigen::Index j = 0; j < dy.cols(); ++j) {
    dgamma[static_cast<std::size_t>(j)] += dy.col(j).dot(c.xhat.col(j));
    dbeta[static_cast<std::size_t>(j)] += dy.col(j).sum();
  }
  MatrixRM dxhat = dy.array().rowwise() * gamma.array();
  MatrixRM dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).sum() / n;
    const double m2 = dxhat.row(r).dot(c.xhat.row(r)) / n;
    dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Inverted dropout mask: 0 or 1/(1-p). Empty when inactive.
MatrixRM dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return {};
  std::bernoulli_distribution keep(1.0 - p);
  MatrixRM m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return m;
}

void apply_mask(MatrixRM& x, const MatrixRM& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

void add_outer(std::vector<double>& g, const MatrixRM& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) g[static_cast<std::size_t>(i)] += m.data()[i];
}

void add_colsum(std::vector<double>& g, const MatrixRM& m) {
  const RowVec s = m.colwise().sum();
  for (Eigen::Index i = 0; i < s.size(); ++i) g[static_cast<std::size_t>(i)] += s(i);
}

}  // namespace

struct LayerCache {
  MatrixRM x_in, q, k, v, ctx;
  std::vector<MatrixRM> probs;
  MatrixRM attn_mask, ffn_mask;
  LnCache ln1, ln2;
  MatrixRM x1, ffn_pre, ffn_act;
};

struct ExampleCache {
  MatrixRM bn_out;  // continuous: L x F input of the mapping layer
  std::vector<std::int32_t> tokens;
  std::vector<bool> key_valid;
  LnCache emb_ln;
  MatrixRM emb_mask;
  std::vector<LayerCache> layers;
  Vec h0, pooled, pool_mask;
};

struct ForwardTrace {
  std::vector<ExampleCache> examples;
  bool batch_stats = false;
  std::vector<double> bn_mean, bn_var;  // biased batch statistics per position
  std::vector<MatrixRM> bn_xhat;        // per example, L x F
  std::size_t bn_count = 0;             // elements per position
};

namespace {

struct Forwarder {
  const ModelParams& params;
  const ModelConfig& cfg;
  const Dense w;
  const ParamSlots& s;

  explicit Forwarder(const ModelParams& p) : params(p), cfg(p.config()), w(p), s(p.slots()) {}

  MatrixRM encoder_layer(const MatrixRM& x, const LayerSlots& ls, const std::vector<bool>& key_valid,
                         Rng* drop, LayerCache* c, std::vector<MatrixRM>* attn_out) const {
    const Eigen::Index L = x.rows();
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    MatrixRM q = (x * w[ls.q_w].transpose()).rowwise() + w.row(ls.q_b);
    MatrixRM k = (x * w[ls.k_w].transpose()).rowwise() + w.row(ls.k_b);
    MatrixRM v = (x * w[ls.v_w].transpose()).rowwise() + w.row(ls.v_b);
    MatrixRM ctx(L, cfg.hidden);
    std::vector<MatrixRM> probs;
    for (int h = 0; h < cfg.heads; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      MatrixRM sc = (qh * kh.transpose()) * scale;
      for (Eigen::Index i = 0; i < L; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < L; ++j)
          if (key_valid[static_cast<std::size_t>(j)]) mx = std::max(mx, sc(i, j));
        double sum = 0.0;
        for (Eigen::Index j = 0; j < L; ++j) {
          const double e = key_valid[static_cast<std::size_t>(j)] ? std::exp(sc(i, j) - mx) : 0.0;
          sc(i, j) = e;
          sum += e;
        }
        sc.row(i) /= sum;
      }
      ctx.middleCols(h * dh, dh) = sc * v.middleCols(h * dh, dh);
      if (attn_out) attn_out->push_back(sc);
      if (c) probs.push_back(std::move(sc));
    }
    MatrixRM a = (ctx * w[ls.o_w].transpose()).rowwise() + w.row(ls.o_b);
    MatrixRM attn_mask = dropout_mask(L, cfg.hidden, cfg.dropout, drop);
    apply_mask(a, attn_mask);
    LnCache ln1;
    MatrixRM x1 = layer_norm(x + a, w.row(ls.attn_ln_g), w.row(ls.attn_ln_b), c ? &ln1 : nullptr);

    MatrixRM pre = (x1 * w[ls.ffn_in_w].transpose()).rowwise() + w.row(ls.ffn_in_b);
    MatrixRM act = pre.unaryExpr([](double z) { return gelu(z); });
    MatrixRM o = (act * w[ls.ffn_out_w].transpose()).rowwise() + w.row(ls.ffn_out_b);
    MatrixRM ffn_mask = dropout_mask(L, cfg.hidden, cfg.dropout, drop);
    apply_mask(o, ffn_mask);
    LnCache ln2;
    MatrixRM x2 = layer_norm(x1 + o, w.row(ls.ffn_ln_g), w.row(ls.ffn_ln_b), c ? &ln2 : nullptr);

    if (c) {
      c->x_in = x;
      c->q = std::move(q);
      c->k = std::move(k);
      c->v = std::move(v);
      c->ctx = std::move(ctx);
      c->probs = std::move(probs);
      c->attn_mask = std::move(attn_mask);
      c->ffn_mask = std::move(ffn_mask);
      c->ln1 = std::move(ln1);
      c->ln2 = std::move(ln2);
      c->x1 = std::move(x1);
      c->ffn_pre = std::move(pre);
      c->ffn_act = std::move(act);
    }
    return x2;
  }

  // Everything after the input normalization, for one example.
  RowVec example(const MatrixRM& bn_out, std::span<const std::int32_t> tokens, Rng* drop,
                 ExampleCache* c, std::vector<MatrixRM>* attn_out) const {
    const Eigen::Index L = cfg.seq_len;
    MatrixRM e0;
    std::vector<bool> key_valid(static_cast<std::size_t>(L), true);
    if (cfg.input_mode == InputMode::continuous) {
      e0 = (bn_out * w[s.map_w].transpose()).rowwise() + w.row(s.map_b);
    } else {
      e0.resize(L, cfg.hidden);
      const auto vocab = static_cast<std::int32_t>(cfg.input_dim);
      for (Eigen::Index l = 0; l < L; ++l) {
        const auto id = tokens[static_cast<std::size_t>(l)];
        if (id < 0 || id >= vocab)
          throw ConfigError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab));
        e0.row(l) = w[s.tok_emb].row(id);
        if (s.has_pos) e0.row(l) += w[s.pos_emb].row(l);
        key_valid[static_cast<std::size_t>(l)] = id != kPadToken;
      }
      key_valid[0] = true;
    }
    e0.rowwise() += w[s.seg_emb].row(0);
    LnCache emb_ln;
    MatrixRM x = layer_norm(e0, w.row(s.emb_ln_g), w.row(s.emb_ln_b), c ? &emb_ln : nullptr);
    MatrixRM emb_mask = dropout_mask(L, cfg.hidden, cfg.dropout, drop);
    apply_mask(x, emb_mask);

    if (c) c->layers.resize(static_cast<std::size_t>(cfg.layers));
    for (int li = 0; li < cfg.layers; ++li) {
      const auto& ls = s.blocks[static_cast<std::size_t>(cfg.share_layers ? 0 : li)];
      x = encoder_layer(x, ls, key_valid, drop, c ? &c->layers[static_cast<std::size_t>(li)] : nullptr, attn_out);
    }

    const Vec h0 = x.row(0).transpose();
    Vec pooled = (w[s.pool_w] * h0 + w[s.pool_b].row(0).transpose()).array().tanh().matrix();
    Vec pool_mask;
    Vec pooled_d = pooled;
    if (drop != nullptr && cfg.dropout > 0.0f) {
      const MatrixRM m = dropout_mask(cfg.hidden, 1, cfg.dropout, drop);
      pool_mask = m.col(0);
      pooled_d.array() *= pool_mask.array();
    }
    RowVec logits = (w[s.cls_w] * pooled_d + w[s.cls_b].row(0).transpose()).transpose();
    if (c) {
      c->bn_out = bn_out;
      c->tokens.assign(tokens.begin(), tokens.end());
      c->key_valid = std::move(key_valid);
      c->emb_ln = std::move(emb_ln);
      c->emb_mask = std::move(emb_mask);
      c->h0 = h0;
      c->pooled = std::move(pooled);
      c->pool_mask = std::move(pool_mask);
    }
    return logits;
  }
};

void check_batch(const ModelConfig& cfg, const Batch& batch) {
  const auto B = batch.size;
  const auto L = static_cast<std::size_t>(cfg.seq_len);
  if (B == 0) throw ConfigError("forward: empty batch");
  if (cfg.input_mode == InputMode::continuous) {
    const auto F = static_cast<std::size_t>(cfg.input_dim);
    if (batch.features.size() != B * L * F)
      throw ConfigError("forward: expected " + std::to_string(B) + " x L=" + std::to_string(L) +
                        " x F=" + std::to_string(F) + " features, got " +
                        std::to_string(batch.features.size()) + " values");
  } else if (batch.tokens.size() != B * L) {
    throw ConfigError("forward: expected " + std::to_string(B) + " x L=" + std::to_string(L) +
                      " token ids, got " + std::to_string(batch.tokens.size()));
  }
}

MatrixRM example_input(const ModelConfig& cfg, const Batch& batch, std::size_t b) {
  const auto L = cfg.seq_len, F = cfg.input_dim;
  const std::size_t per = static_cast<std::size_t>(L) * static_cast<std::size_t>(F);
  MatrixRM x(L, F);
  for (std::size_t i = 0; i < per; ++i) x.data()[i] = batch.features[b * per + i];
  return x;
}

}  // namespace

ForwardResult forward(const ModelParams& params, const Batch& batch, const ForwardOptions& opts,
                      bool keep_attention) {
  const auto& cfg = params.config();
  check_batch(cfg, batch);
  const Forwarder fw(params);
  const auto& s = params.slots();
  const std::size_t B = batch.size;
  const auto L = static_cast<std::size_t>(cfg.seq_len);

  ForwardResult res;
  res.logits.resize(static_cast<Eigen::Index>(B), cfg.classes);
  std::shared_ptr<ForwardTrace> trace;
  if (opts.training) {
    trace = std::make_shared<ForwardTrace>();
    trace->examples.resize(B);
  }

  // Input normalization: each sequence position is a channel.
  std::vector<MatrixRM> normed(cfg.input_mode == InputMode::continuous ? B : 0);
  if (cfg.input_mode == InputMode::continuous) {
    const auto F = static_cast<std::size_t>(cfg.input_dim);
    const auto& gamma = params.at(s.bn_gamma).data;
    const auto& beta = params.at(s.bn_beta).data;
    std::vector<double> mean(L), var(L);
    const bool batch_stats = opts.training && opts.use_batch_stats;
    for (std::size_t b = 0; b < B; ++b) normed[b] = example_input(cfg, batch, b);
    if (batch_stats) {
      const double n = static_cast<double>(B * F);
      for (std::size_t l = 0; l < L; ++l) {
        double m = 0.0;
        for (std::size_t b = 0; b < B; ++b) m += normed[b].row(static_cast<Eigen::Index>(l)).sum();
        m /= n;
        double v = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          v += (normed[b].row(static_cast<Eigen::Index>(l)).array() - m).square().sum();
        mean[l] = m;
        var[l] = v / n;
      }
    } else {
      for (std::size_t l = 0; l < L; ++l) {
        mean[l] = params.at(s.bn_mean).data[l];
        var[l] = params.at(s.bn_var).data[l];
      }
    }
    if (trace) {
      trace->batch_stats = batch_stats;
      trace->bn_mean = mean;
      trace->bn_var = var;
      trace->bn_count = B * F;
      trace->bn_xhat.resize(B);
    }
    for (std::size_t b = 0; b < B; ++b) {
      auto& x = normed[b];
      for (std::size_t l = 0; l < L; ++l) {
        const auto r = static_cast<Eigen::Index>(l);
        const double rstd = 1.0 / std::sqrt(var[l] + kBatchNormEps);
        x.row(r) = ((x.row(r).array() - mean[l]) * rstd).matrix();
      }
      if (trace) trace->bn_xhat[b] = x;
      for (std::size_t l = 0; l < L; ++l) {
        const auto r = static_cast<Eigen::Index>(l);
        x.row(r) = (x.row(r).array() * gamma[l] + beta[l]).matrix();
      }
    }
  }

  Rng drop_rng(opts.dropout_seed);
  Rng* drop = opts.training && cfg.dropout > 0.0f ? &drop_rng : nullptr;
  static const MatrixRM kEmpty;
  for (std::size_t b = 0; b < B; ++b) {
    std::span<const std::int32_t> toks;
    if (cfg.input_mode == InputMode::tokens) toks = std::span(batch.tokens).subspan(b * L, L);
    std::vector<MatrixRM>* attn = keep_attention && b == 0 ? &res.attention : nullptr;
    res.logits.row(static_cast<Eigen::Index>(b)) =
        fw.example(cfg.input_mode == InputMode::continuous ? normed[b] : kEmpty, toks, drop,
                   trace ? &trace->examples[b] : nullptr, attn);
  }
  res.trace = std::move(trace);
  return res;
}

MatrixRM predict_logits(const ModelParams& params, const Batch& batch) {
  const auto& cfg = params.config();
  check_batch(cfg, batch);
  MatrixRM out(static_cast<Eigen::Index>(batch.size), cfg.classes);
  for (std::size_t b = 0; b < batch.size; ++b)
    out.row(static_cast<Eigen::Index>(b)) = forward(params, batch.slice(b, cfg), {}).logits.row(0);
  return out;
}

Gradients backward(const ModelParams& params, const ForwardTrace& trace, const MatrixRM& dlogits) {
  const auto& cfg = params.config();
  const auto& s = params.slots();
  const Dense w(params);
  Gradients grads;
  grads.values.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) grads.values.emplace_back(t.size(), 0.0);
  auto& g = grads.values;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t B = trace.examples.size();
  std::vector<MatrixRM> d_bn_out(B);

  for (std::size_t b = 0; b < B; ++b) {
    const auto& c = trace.examples[b];
    const Vec dlog = dlogits.row(static_cast<Eigen::Index>(b)).transpose();

    Vec pooled_d = c.pooled;
    if (c.pool_mask.size() != 0) pooled_d.array() *= c.pool_mask.array();
    add_outer(g[s.cls_w], dlog * pooled_d.transpose());
    for (Eigen::Index i = 0; i < dlog.size(); ++i) g[s.cls_b][static_cast<std::size_t>(i)] += dlog(i);
    Vec dpooled = w[s.cls_w].transpose() * dlog;
    if (c.pool_mask.size() != 0) dpooled.array() *= c.pool_mask.array();
    const Vec dz = dpooled.array() * (1.0 - c.pooled.array().square());
    add_outer(g[s.pool_w], dz * c.h0.transpose());
    for (Eigen::Index i = 0; i < dz.size(); ++i) g[s.pool_b][static_cast<std::size_t>(i)] += dz(i);

    MatrixRM dx = MatrixRM::Zero(cfg.seq_len, cfg.hidden);
    dx.row(0) = (w[s.pool_w].transpose() * dz).transpose();

    for (int li = cfg.layers - 1; li >= 0; --li) {
      const auto& ls = s.blocks[static_cast<std::size_t>(cfg.share_layers ? 0 : li)];
      const auto& lc = c.layers[static_cast<std::size_t>(li)];
      // FFN sublayer.
      MatrixRM ds2 = layer_norm_backward(dx, lc.ln2, w.row(ls.ffn_ln_g), g[ls.ffn_ln_g], g[ls.ffn_ln_b]);
      MatrixRM dx1 = ds2;
      MatrixRM d_o = ds2;
      apply_mask(d_o, lc.ffn_mask);
      add_outer(g[ls.ffn_out_w], d_o.transpose() * lc.ffn_act);
      add_colsum(g[ls.ffn_out_b], d_o);
      MatrixRM dpre = d_o * w[ls.ffn_out_w];
      for (Eigen::Index i = 0; i < dpre.size(); ++i) dpre.data()[i] *= gelu_grad(lc.ffn_pre.data()[i]);
      add_outer(g[ls.ffn_in_w], dpre.transpose() * lc.x1);
      add_colsum(g[ls.ffn_in_b], dpre);
      dx1 += dpre * w[ls.ffn_in_w];

      // Attention sublayer.
      MatrixRM ds1 = layer_norm_backward(dx1, lc.ln1, w.row(ls.attn_ln_g), g[ls.attn_ln_g], g[ls.attn_ln_b]);
      MatrixRM dxin = ds1;
      MatrixRM da = ds1;
      apply_mask(da, lc.attn_mask);
      add_outer(g[ls.o_w], da.transpose() * lc.ctx);
      add_colsum(g[ls.o_b], da);
      const MatrixRM dctx = da * w[ls.o_w];
      MatrixRM dq(cfg.seq_len, cfg.hidden), dk(cfg.seq_len, cfg.hidden), dv(cfg.seq_len, cfg.hidden);
      for (int h = 0; h < cfg.heads; ++h) {
        const MatrixRM& p = lc.probs[static_cast<std::size_t>(h)];
        const auto dctx_h = dctx.middleCols(h * dh, dh);
        const MatrixRM dp = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) = p.transpose() * dctx_h;
        MatrixRM dsc = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        dsc *= scale;
        dq.middleCols(h * dh, dh) = dsc * lc.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh) = dsc.transpose() * lc.q.middleCols(h * dh, dh);
      }
      add_outer(g[ls.q_w], dq.transpose() * lc.x_in);
      add_colsum(g[ls.q_b], dq);
      add_outer(g[ls.k_w], dk.transpose() * lc.x_in);
      add_colsum(g[ls.k_b], dk);
      add_outer(g[ls.v_w], dv.transpose() * lc.x_in);
      add_colsum(g[ls.v_b], dv);
      dxin += dq * w[ls.q_w] + dk * w[ls.k_w] + dv * w[ls.v_w];
      dx = std::move(dxin);
    }

    apply_mask(dx, c.emb_mask);
    const MatrixRM de0 = layer_norm_backward(dx, c.emb_ln, w.row(s.emb_ln_g), g[s.emb_ln_g], g[s.emb_ln_b]);
    const RowVec dseg = de0.colwise().sum();
    for (Eigen::Index j = 0; j < dseg.size(); ++j) g[s.seg_emb][static_cast<std::size_t>(j)] += dseg(j);
    if (cfg.input_mode == InputMode::continuous) {
      add_outer(g[s.map_w], de0.transpose() * c.bn_out);
      add_colsum(g[s.map_b], de0);
      d_bn_out[b] = de0 * w[s.map_w];
    } else {
      const auto H = static_cast<std::size_t>(cfg.hidden);
      for (Eigen::Index l = 0; l < cfg.seq_len; ++l) {
        const auto id = static_cast<std::size_t>(c.tokens[static_cast<std::size_t>(l)]);
        for (std::size_t j = 0; j < H; ++j) {
          g[s.tok_emb][id * H + j] += de0(l, static_cast<Eigen::Index>(j));
          if (s.has_pos) g[s.pos_emb][static_cast<std::size_t>(l) * H + j] += de0(l, static_cast<Eigen::Index>(j));
        }
      }
    }
  }

  if (cfg.input_mode == InputMode::continuous) {
    // Only gamma/beta need gradients; the raw input is not learnable.
    for (std::size_t b = 0; b < B; ++b) {
      for (Eigen::Index l = 0; l < cfg.seq_len; ++l) {
        const auto lu = static_cast<std::size_t>(l);
        g[s.bn_gamma][lu] += d_bn_out[b].row(l).dot(trace.bn_xhat[b].row(l));
        g[s.bn_beta][lu] += d_bn_out[b].row(l).sum();
      }
    }
  }
  return grads;
}

void update_running_stats(ModelParams& params, const ForwardTrace& trace, double momentum) {
  if (params.config().input_mode != InputMode::continuous || !trace.batch_stats) return;
  const auto& s = params.slots();
  auto& mean = params.at(s.bn_mean).data;
  auto& var = params.at(s.bn_var).data;
  const double n = static_cast<double>(trace.bn_count);
  const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
  for (std::size_t l = 0; l < mean.size(); ++l) {
    mean[l] = static_cast<float>((1.0 - momentum) * mean[l] + momentum * trace.bn_mean[l]);
    var[l] = static_cast<float>((1.0 - momentum) * var[l] + momentum * trace.bn_var[l] * unbias);
  }
}

// ---------------------------------------------------------------------------
// Accounting

std::uint64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t H = static_cast<std::uint64_t>(cfg.hidden);
  const std::uint64_t L = static_cast<std::uint64_t>(cfg.seq_len);
  const std::uint64_t F = static_cast<std::uint64_t>(cfg.input_dim);
  const std::uint64_t C = static_cast<std::uint64_t>(cfg.classes);
  const std::uint64_t ffn = static_cast<std::uint64_t>(cfg.ffn_dim);
  std::uint64_t n = 0;
  if (cfg.input_mode == InputMode::continuous) {
    n += 2 * L;          // batch-norm scale and shift per position
    n += F * H + H;      // mapping layer
  } else {
    n += F * H;          // token embedding
    if (cfg.use_positional) n += L * H;
  }
  n += 2 * H;  // segment table
  n += 2 * H;  // embedding LayerNorm
  const std::uint64_t block = 4 * (H * H + H)   // Q, K, V, O
                              + 2 * H           // attention LayerNorm
                              + (ffn * H + ffn) // FFN in
                              + (H * ffn + H)   // FFN out
                              + 2 * H;          // FFN LayerNorm
  n += static_cast<std::uint64_t>(cfg.layer_blocks()) * block;
  n += H * H + H;  // pooler
  n += H * C + C;  // classifier
  return n;
}

std::uint64_t count_mult_adds(const ModelConfig& cfg, MacConvention convention) {
  cfg.validate();
  const std::uint64_t H = static_cast<std::uint64_t>(cfg.hidden);
  const std::uint64_t L = static_cast<std::uint64_t>(cfg.seq_len);
  const std::uint64_t F = static_cast<std::uint64_t>(cfg.input_dim);
  const std::uint64_t C = static_cast<std::uint64_t>(cfg.classes);
  const std::uint64_t ffn = static_cast<std::uint64_t>(cfg.ffn_dim);
  const std::uint64_t layers = static_cast<std::uint64_t>(cfg.layers);
  const bool continuous = cfg.input_mode == InputMode::continuous;
  if (convention == MacConvention::per_position) {
    std::uint64_t n = 0;
    if (continuous) {
      n += L;      // batch-norm scale
      n += F * H;  // mapping weight
    } else {
      n += F * H;
      if (cfg.use_positional) n += L * H;
    }
    n += 2 * H;                                      // segment table
    n += H;                                          // embedding LayerNorm scale
    n += layers * (4 * H * H + 2 * ffn * H + 2 * H); // attention, FFN, two LayerNorm scales
    n += H * H + H * C;                              // pooler, classifier
    return n;
  }
  std::uint64_t n = 0;
  if (continuous) n += L * F + L * F * H;
  n += layers * (4 * L * H * H     // Q, K, V, O projections
                 + 2 * L * L * H   // scores and weighted values
                 + 2 * L * ffn * H);
  n += H * H + H * C;
  return n;
}

// ---------------------------------------------------------------------------
// Config serialization

void write_config(ByteWriter& w, const ModelConfig& cfg) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(cfg.input_mode));
  for (int v : {cfg.input_dim, cfg.seq_len, cfg.hidden, cfg.layers, cfg.heads, cfg.ffn_dim, cfg.classes})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint8_t>(cfg.use_positional ? 1 : 0);
  w.put<std::uint8_t>(cfg.share_layers ? 1 : 0);
  w.put<float>(cfg.dropout);
}

ModelConfig read_config(ByteReader& r) {
  ModelConfig cfg;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw FormatError("config block: unknown input mode " + std::to_string(mode));
  cfg.input_mode = static_cast<InputMode>(mode);
  int* fields[] = {&cfg.input_dim, &cfg.seq_len, &cfg.hidden, &cfg.layers, &cfg.heads, &cfg.ffn_dim, &cfg.classes};
  for (int* f : fields) *f = static_cast<int>(r.get<std::uint32_t>());
  cfg.use_positional = r.get<std::uint8_t>() != 0;
  cfg.share_layers = r.get<std::uint8_t>() != 0;
  cfg.dropout = r.get<float>();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("config block: ") + e.what());
  }
  return cfg;
}

}  // namespace tinysound
