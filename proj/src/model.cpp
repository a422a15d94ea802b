#include "msl/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msl/random.hpp"

namespace msl {

namespace {

constexpr double kMasked = -1e9;

// Dropout seeds are drawn per call site in forward order.
class DropoutSites {
 public:
  DropoutSites(const ModelConfig& config, const ForwardOptions& options)
      : p_(options.train_mode ? config.dropout : 0.0), seed_(options.dropout_seed) {}

  Var apply(const Var& x) {
    const std::uint64_t site = next_++;
    if (p_ == 0.0) return x;
    return dropout(x, p_, derive_seed(seed_, {site}));
  }

 private:
  double p_;
  std::uint64_t seed_;
  std::uint64_t next_ = 0;
};

void check_tokens(const TokenMatrix& tokens, int vocab, int max_len, const char* what) {
  if (tokens.rows() == 0 || tokens.cols() == 0) throw DimensionError(std::string(what) + " is empty");
  if (tokens.cols() > max_len) {
    throw DimensionError(std::string(what) + " length " + std::to_string(tokens.cols()) +
                         " exceeds max_len " + std::to_string(max_len));
  }
  for (Index i = 0; i < tokens.size(); ++i) {
    const int t = tokens.data()[i];
    if (t < 0 || t >= vocab) {
      throw LabelError(std::string(what) + " token " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
  }
}

Var linear(const ParamVars& p, const std::string& prefix, const Var& x) {
  const Shape in_shape = x.shape();
  const Index in_dim = in_shape.back();
  const Index rows = x.value().size() / in_dim;
  Var y = add_bias(matmul(reshape(x, {rows, in_dim}), p[prefix + ".weight"]), p[prefix + ".bias"]);
  Shape out_shape = in_shape;
  out_shape.back() = y.shape().back();
  return reshape(y, out_shape);
}

Var norm(const ParamVars& p, const std::string& prefix, const Var& x) {
  return layer_norm(x, p[prefix + ".gain"], p[prefix + ".bias"]);
}

// [B x T x H*d] -> [B*H x T x d]
Var split_heads(const Var& x, Index heads) {
  const Index b = x.shape()[0], t = x.shape()[1], d = x.shape()[2] / heads;
  return reshape(permute(reshape(x, {b, t, heads, d}), {0, 2, 1, 3}), {b * heads, t, d});
}

// [B*H x T x d] -> [B x T x H*d]
Var merge_heads(const Var& x, Index batch, Index heads) {
  const Index t = x.shape()[1], d = x.shape()[2];
  return reshape(permute(reshape(x, {batch, heads, t, d}), {0, 2, 1, 3}), {batch, t, heads * d});
}

// Additive mask [B*H x Tq x Tk]: pad keys and, if causal, future keys.
Tensor attention_mask(const TokenMatrix* key_tokens, Index batch, Index heads, Index tq, Index tk,
                      bool causal, int pad_id) {
  Tensor mask({batch * heads, tq, tk});
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < tq; ++i)
        for (Index j = 0; j < tk; ++j) {
          const bool pad_key = key_tokens && (*key_tokens)(b, j) == pad_id;
          const bool future = causal && j > i;
          if (pad_key || future) mask[((b * heads + h) * tq + i) * tk + j] = kMasked;
        }
  return mask;
}

Var multi_head_attention(const ParamVars& p, const ModelConfig& c, const std::string& prefix,
                         const Var& query, const Var& keys, Tensor mask, DropoutSites& drop) {
  const Index batch = query.shape()[0];
  Var q = split_heads(linear(p, prefix + ".wq", query), c.n_heads);
  Var k = split_heads(linear(p, prefix + ".wk", keys), c.n_heads);
  Var v = split_heads(linear(p, prefix + ".wv", keys), c.n_heads);
  Var scores = scale(batched_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(c.d_k)));
  scores = add(scores, query.recording().constant(std::move(mask)));
  Var ctx = batched_matmul(softmax_rows(scores), v);
  return drop.apply(linear(p, prefix + ".wo", merge_heads(ctx, batch, c.n_heads)));
}

Var feed_forward(const ParamVars& p, const std::string& prefix, const Var& x, DropoutSites& drop) {
  return drop.apply(linear(p, prefix + ".ff2", relu(linear(p, prefix + ".ff1", x))));
}

Var embed_tokens(const ParamVars& p, const char* table, const TokenMatrix& tokens, Index d_model) {
  const Index b = tokens.rows(), t = tokens.cols();
  std::vector<int> ids(tokens.data(), tokens.data() + tokens.size());
  Var e = scale(embedding(p[table], ids), std::sqrt(static_cast<double>(d_model)));
  return reshape(e, {b, t, d_model});
}

Var add_positions(Recording& rec, const Var& x) {
  const Index b = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
  const Tensor pe = positional_encoding(t, d);
  Tensor tiled({b, t, d});
  for (Index i = 0; i < b; ++i) tiled.values().segment(i * t * d, t * d) = pe.values();
  return add(x, rec.constant(std::move(tiled)));
}

Var conv_frontend(const ParamVars& p, const ModelConfig& c, const Tensor& features) {
  const ConvSpec& spec = *c.conv;
  if (features.rank() != 3 || features.dim(2) != spec.feature_dim) {
    throw DimensionError("conv front-end expects features [B x S x " + std::to_string(spec.feature_dim) +
                         "], got " + to_string(features.shape()));
  }
  Recording& rec = p.recording();
  const Index b = features.dim(0), s = features.dim(1), f = features.dim(2);
  Var x = rec.constant(features.reshaped({b, 1, s, f}));
  for (int l = 0; l < spec.n_layers; ++l) {
    const std::string name = "conv" + std::to_string(l);
    x = relu(conv2d(x, p[name + ".weight"], p[name + ".bias"]));
  }
  x = reshape(permute(x, {0, 2, 1, 3}), {b, s, spec.channels * f});
  return linear(p, "conv_proj", x);
}

void add_uniform(ParamSet& params, const std::string& name, Shape shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  params.add(name, std::move(t));
}

void add_linear(ParamSet& params, const std::string& name, Index in, Index out, Rng& rng) {
  add_uniform(params, name + ".weight", {in, out}, in, rng);
  params.add(name + ".bias", Tensor::zeros({out}));
}

void add_norm(ParamSet& params, const std::string& name, Index d) {
  params.add(name + ".gain", Tensor::full({d}, 1.0));
  params.add(name + ".bias", Tensor::zeros({d}));
}

void add_attention(ParamSet& params, const std::string& name, const ModelConfig& c, Rng& rng) {
  add_linear(params, name + ".wq", c.d_model, c.n_heads * c.d_k, rng);
  add_linear(params, name + ".wk", c.d_model, c.n_heads * c.d_k, rng);
  add_linear(params, name + ".wv", c.d_model, c.n_heads * c.d_v, rng);
  add_linear(params, name + ".wo", c.n_heads * c.d_v, c.d_model, rng);
}

}  // namespace

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.d_model = 512;
  c.n_heads = 8;
  c.d_k = 64;
  c.d_v = 64;
  c.d_ff = 2048;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 4;
  c.dropout = 0.1;
  c.max_len = 512;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(d_model, "d-model");
  positive(n_heads, "n-heads");
  positive(d_k, "d-k");
  positive(d_v, "d-v");
  positive(d_ff, "d-ff");
  positive(n_encoder_layers, "encoder-layers");
  positive(n_decoder_layers, "decoder-layers");
  positive(src_vocab, "src-vocab");
  positive(tgt_vocab, "tgt-vocab");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (max_len < 2) throw ConfigError("model.max-len must be at least 2");
  if (src_vocab <= TokenLayout::eos || tgt_vocab <= TokenLayout::eos) {
    throw ConfigError("vocabularies must include the reserved pad/bos/eos ids");
  }
  if (conv) {
    positive(conv->n_layers, "conv-layers");
    positive(conv->channels, "conv-channels");
    positive(conv->feature_dim, "feature-dim");
  }
}

SequenceBatch make_sequence_batch(std::span<const std::vector<int>> sources,
                                  std::span<const std::vector<int>> targets) {
  if (sources.size() != targets.size() || sources.empty()) {
    throw ContractError("make_sequence_batch: need equally many non-zero sources and targets");
  }
  std::size_t src_len = 0, tgt_len = 0;
  for (const auto& s : sources) src_len = std::max(src_len, s.size() + 1);
  for (const auto& t : targets) tgt_len = std::max(tgt_len, t.size() + 1);
  const auto rows = static_cast<Index>(sources.size());
  SequenceBatch batch;
  batch.src = TokenMatrix::Constant(rows, static_cast<Index>(src_len), TokenLayout::pad);
  batch.tgt_in = TokenMatrix::Constant(rows, static_cast<Index>(tgt_len), TokenLayout::pad);
  batch.tgt_out = TokenMatrix::Constant(rows, static_cast<Index>(tgt_len), TokenLayout::pad);
  for (Index r = 0; r < rows; ++r) {
    const auto& s = sources[static_cast<std::size_t>(r)];
    const auto& t = targets[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < s.size(); ++i) batch.src(r, static_cast<Index>(i)) = s[i] + TokenLayout::first_symbol;
    batch.src(r, static_cast<Index>(s.size())) = TokenLayout::eos;
    batch.tgt_in(r, 0) = TokenLayout::bos;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const int tok = t[i] + TokenLayout::first_symbol;
      batch.tgt_out(r, static_cast<Index>(i)) = tok;
      batch.tgt_in(r, static_cast<Index>(i) + 1) = tok;
    }
    batch.tgt_out(r, static_cast<Index>(t.size())) = TokenLayout::eos;
  }
  return batch;
}

SequenceBatch select_rows(const SequenceBatch& batch, std::span<const Index> rows) {
  if (rows.empty()) throw ContractError("select_rows: empty row selection");
  auto used_cols = [&](const TokenMatrix& m) {
    Index cols = 1;
    for (Index r : rows)
      for (Index j = m.cols(); j-- > 0;)
        if (m(r, j) != batch.pad_id) {
          cols = std::max(cols, j + 1);
          break;
        }
    return cols;
  };
  const auto n = static_cast<Index>(rows.size());
  const Index s = used_cols(batch.src);
  const Index t = std::max(used_cols(batch.tgt_in), used_cols(batch.tgt_out));
  SequenceBatch out;
  out.pad_id = batch.pad_id;
  out.bos_id = batch.bos_id;
  out.eos_id = batch.eos_id;
  out.src.resize(n, s);
  out.tgt_in.resize(n, t);
  out.tgt_out.resize(n, t);
  for (Index i = 0; i < n; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    out.src.row(i) = batch.src.row(r).head(s);
    out.tgt_in.row(i) = batch.tgt_in.row(r).head(t);
    out.tgt_out.row(i) = batch.tgt_out.row(r).head(t);
  }
  if (batch.features) {
    const Index f = batch.features->dim(2);
    const Index full_s = batch.features->dim(1);
    Tensor feats({n, s, f});
    for (Index i = 0; i < n; ++i) {
      const Index r = rows[static_cast<std::size_t>(i)];
      feats.values().segment(i * s * f, s * f) = batch.features->values().segment(r * full_s * f, s * f);
    }
    out.features = std::move(feats);
  }
  return out;
}

ParamSet init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  ParamSet p;
  if (c.conv) {
    int in_channels = 1;
    for (int l = 0; l < c.conv->n_layers; ++l) {
      const std::string name = "conv" + std::to_string(l);
      add_uniform(p, name + ".weight", {c.conv->channels, in_channels, 3, 3}, in_channels * 9, rng);
      p.add(name + ".bias", Tensor::zeros({c.conv->channels}));
      in_channels = c.conv->channels;
    }
    add_linear(p, "conv_proj", c.conv->channels * c.conv->feature_dim, c.d_model, rng);
  } else {
    add_uniform(p, "src_embed", {c.src_vocab, c.d_model}, c.d_model, rng);
  }
  add_uniform(p, "tgt_embed", {c.tgt_vocab, c.d_model}, c.d_model, rng);
  for (int l = 0; l < c.n_encoder_layers; ++l) {
    const std::string name = "enc" + std::to_string(l);
    add_attention(p, name + ".self_attn", c, rng);
    add_norm(p, name + ".ln1", c.d_model);
    add_linear(p, name + ".ff1", c.d_model, c.d_ff, rng);
    add_linear(p, name + ".ff2", c.d_ff, c.d_model, rng);
    add_norm(p, name + ".ln2", c.d_model);
  }
  for (int l = 0; l < c.n_decoder_layers; ++l) {
    const std::string name = "dec" + std::to_string(l);
    add_attention(p, name + ".self_attn", c, rng);
    add_norm(p, name + ".ln1", c.d_model);
    add_attention(p, name + ".cross_attn", c, rng);
    add_norm(p, name + ".ln2", c.d_model);
    add_linear(p, name + ".ff1", c.d_model, c.d_ff, rng);
    add_linear(p, name + ".ff2", c.d_ff, c.d_model, rng);
    add_norm(p, name + ".ln3", c.d_model);
  }
  add_linear(p, "out", c.d_model, c.tgt_vocab, rng);
  return p;
}

Tensor positional_encoding(Index length, Index d_model) {
  Tensor pe({length, d_model});
  for (Index pos = 0; pos < length; ++pos)
    for (Index i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

Var encode(const ParamVars& p, const ModelConfig& c, const TokenMatrix& src,
           const std::optional<Tensor>& features, const ForwardOptions& options) {
  check_tokens(src, c.src_vocab, c.max_len, "source");
  Recording& rec = p.recording();
  DropoutSites drop(c, options);
  const Index batch = src.rows(), s = src.cols();
  Var x;
  if (c.conv) {
    if (!features || features->dim(0) != batch || features->dim(1) != s) {
      throw DimensionError("conv front-end requires features matching the source shape");
    }
    x = conv_frontend(p, c, *features);
  } else {
    x = embed_tokens(p, "src_embed", src, c.d_model);
  }
  x = drop.apply(add_positions(rec, x));
  for (int l = 0; l < c.n_encoder_layers; ++l) {
    const std::string name = "enc" + std::to_string(l);
    Tensor mask = attention_mask(&src, batch, c.n_heads, s, s, false, TokenLayout::pad);
    x = norm(p, name + ".ln1", add(x, multi_head_attention(p, c, name + ".self_attn", x, x, std::move(mask), drop)));
    x = norm(p, name + ".ln2", add(x, feed_forward(p, name, x, drop)));
  }
  return x;
}

Var decode(const ParamVars& p, const ModelConfig& c, const Var& memory, const TokenMatrix& src,
           const TokenMatrix& tgt_in, const ForwardOptions& options) {
  check_tokens(tgt_in, c.tgt_vocab, c.max_len, "target");
  if (tgt_in.rows() != src.rows()) throw DimensionError("source and target batch sizes differ");
  Recording& rec = p.recording();
  DropoutSites drop(c, {options.train_mode, derive_seed(options.dropout_seed, {0xdec})});
  const Index batch = tgt_in.rows(), t = tgt_in.cols(), s = src.cols();
  Var y = drop.apply(add_positions(rec, embed_tokens(p, "tgt_embed", tgt_in, c.d_model)));
  for (int l = 0; l < c.n_decoder_layers; ++l) {
    const std::string name = "dec" + std::to_string(l);
    Tensor causal = attention_mask(nullptr, batch, c.n_heads, t, t, true, TokenLayout::pad);
    y = norm(p, name + ".ln1", add(y, multi_head_attention(p, c, name + ".self_attn", y, y, std::move(causal), drop)));
    Tensor cross = attention_mask(&src, batch, c.n_heads, t, s, false, TokenLayout::pad);
    y = norm(p, name + ".ln2",
             add(y, multi_head_attention(p, c, name + ".cross_attn", y, memory, std::move(cross), drop)));
    y = norm(p, name + ".ln3", add(y, feed_forward(p, name, y, drop)));
  }
  return linear(p, "out", y);
}

Var forward_logits(const ParamVars& p, const ModelConfig& c, const SequenceBatch& batch,
                   const ForwardOptions& options) {
  Var memory = encode(p, c, batch.src, batch.features, options);
  return decode(p, c, memory, batch.src, batch.tgt_in, options);
}

Tensor forward_logits(const ParamSet& params, const ModelConfig& c, const SequenceBatch& batch,
                      bool train_mode) {
  Recording rec;
  ParamVars vars(rec, params, false);
  return forward_logits(vars, c, batch, {train_mode, 0}).value();
}

Var sequence_nll(const ParamVars& p, const ModelConfig& c, const SequenceBatch& batch,
                 const ForwardOptions& options) {
  if (batch.tgt_out.rows() != batch.tgt_in.rows() || batch.tgt_out.cols() != batch.tgt_in.cols()) {
    throw DimensionError("tgt_in and tgt_out shapes differ");
  }
  Var logits = forward_logits(p, c, batch, options);
  const Index rows = batch.tgt_out.size();
  std::vector<int> labels(batch.tgt_out.data(), batch.tgt_out.data() + rows);
  return cross_entropy(reshape(logits, {rows, c.tgt_vocab}), labels, batch.pad_id);
}

double sequence_nll(const ParamSet& params, const ModelConfig& c, const SequenceBatch& batch,
                    bool train_mode) {
  Recording rec;
  ParamVars vars(rec, params, false);
  return sequence_nll(vars, c, batch, {train_mode, 0}).item();
}

}  // namespace msl
