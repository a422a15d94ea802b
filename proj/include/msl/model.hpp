#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "msl/param_set.hpp"

namespace msl {

/// Reserved token ids shared by source and target vocabularies. Alphabet
/// symbol s maps to token first_symbol + s.
struct TokenLayout {
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int first_symbol = 3;

  static constexpr int vocab_for_alphabet(int alphabet) { return alphabet + first_symbol; }
};

/// Miniature convolutional front-end over [time x feature] maps.
struct ConvSpec {
  int n_layers = 2;
  int channels = 4;
  int feature_dim = 8;
};

struct ModelConfig {
  int d_model = 32;
  int n_heads = 4;
  int d_k = 8;
  int d_v = 8;
  int d_ff = 64;
  int n_encoder_layers = 1;
  int n_decoder_layers = 1;
  double dropout = 0.0;
  int src_vocab = TokenLayout::vocab_for_alphabet(20);
  int tgt_vocab = TokenLayout::vocab_for_alphabet(20);
  int max_len = 32;
  std::optional<ConvSpec> conv;

  /// Small profile used for tests and desk-scale experiments.
  static ModelConfig desk();
  /// Layer counts and widths of the full-size recognizer.
  static ModelConfig full();

  void validate() const;
};

/// Teacher-forced batch. Rows are right-padded with TokenLayout::pad.
struct SequenceBatch {
  TokenMatrix src;      // [B x S], ends with eos
  TokenMatrix tgt_in;   // [B x T], bos-prefixed
  TokenMatrix tgt_out;  // [B x T], eos-suffixed
  std::optional<Tensor> features;  // [B x S x F] when a conv front-end is used
  int pad_id = TokenLayout::pad;
  int bos_id = TokenLayout::bos;
  int eos_id = TokenLayout::eos;

  Index batch_size() const { return src.rows(); }
};

/// Builds a batch from (source symbols, target symbols) pairs over an
/// alphabet; symbols are shifted by TokenLayout::first_symbol.
SequenceBatch make_sequence_batch(std::span<const std::vector<int>> sources,
                                  std::span<const std::vector<int>> targets);

/// Rows `rows` of `batch`, with trailing all-pad columns removed.
SequenceBatch select_rows(const SequenceBatch& batch, std::span<const Index> rows);

/// Deterministic in (config, seed). Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero, layer-norm gains one.
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

/// Sinusoidal position table [length x d_model].
Tensor positional_encoding(Index length, Index d_model);

struct ForwardOptions {
  bool train_mode = false;
  std::uint64_t dropout_seed = 0;
};

/// Encoder states [B x S x d_model].
Var encode(const ParamVars& params, const ModelConfig& config, const TokenMatrix& src,
           const std::optional<Tensor>& features, const ForwardOptions& options);

/// Decoder logits [B x T x tgt_vocab] given encoder states.
Var decode(const ParamVars& params, const ModelConfig& config, const Var& memory,
           const TokenMatrix& src, const TokenMatrix& tgt_in, const ForwardOptions& options);

Var forward_logits(const ParamVars& params, const ModelConfig& config, const SequenceBatch& batch,
                   const ForwardOptions& options);
Tensor forward_logits(const ParamSet& params, const ModelConfig& config, const SequenceBatch& batch,
                      bool train_mode = false);

/// Mean negative log-likelihood over non-pad target positions.
Var sequence_nll(const ParamVars& params, const ModelConfig& config, const SequenceBatch& batch,
                 const ForwardOptions& options);
double sequence_nll(const ParamSet& params, const ModelConfig& config, const SequenceBatch& batch,
                    bool train_mode = false);

}  // namespace msl
