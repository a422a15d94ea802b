#pragma once

#include <functional>
#include <span>
#include <vector>

#include "msl/model.hpp"

namespace msl {

/// Log-probabilities of the next token given the tokens emitted so far
/// (the start symbol is implicit and not part of the prefix).
using StepScorer = std::function<std::vector<double>(std::span<const int> prefix)>;

struct Hypothesis {
  std::vector<int> tokens;  // emitted tokens, end-of-sequence excluded
  double log_prob = 0.0;    // sum of per-step log-probabilities, including the eos step
  bool finished = false;    // ended by eos rather than by the step limit
};

/// Repeatedly emits the most probable token; ties go to the lowest id.
Hypothesis greedy_search(const StepScorer& scorer, int eos_id, int max_steps);

/// Beam search scored by summed log-probability with no length normalization.
/// Equal scores are ordered by the lexicographically smaller token path.
Hypothesis beam_search(const StepScorer& scorer, int eos_id, int beam_size, int max_steps);

/// Scorer for one source row of a trained model.
StepScorer model_scorer(const ParamSet& params, const ModelConfig& config, const TokenMatrix& src_row,
                        const std::optional<Tensor>& features_row = std::nullopt);

std::vector<std::vector<int>> greedy_decode(const ParamSet& params, const ModelConfig& config,
                                            const TokenMatrix& src, int max_steps,
                                            const std::optional<Tensor>& features = std::nullopt);

std::vector<std::vector<int>> beam_decode(const ParamSet& params, const ModelConfig& config,
                                          const TokenMatrix& src, int beam_size, int max_steps,
                                          const std::optional<Tensor>& features = std::nullopt);

}  // namespace msl
