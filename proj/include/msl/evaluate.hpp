#pragma once

#include <cstdint>
#include <optional>

#include "msl/decode.hpp"
#include "msl/tasks.hpp"

namespace msl {

enum class DecodeKind { greedy, beam };

struct DecodeSpec {
  DecodeKind kind = DecodeKind::beam;
  int beam_size = 5;
};

/// Decodes rows of `src` with the requested search.
std::vector<std::vector<int>> decode_sources(const ParamSet& params, const ModelConfig& config,
                                             const SequenceBatch& batch, const DecodeSpec& decode,
                                             int max_steps);

/// Mean per-sequence CER of a sequence model on the target split of
/// `n_eval_episodes` fresh episodes of a cipher task.
double evaluate_model(const ParamSet& params, const ModelConfig& config, const CipherLanguageTask& task,
                      int n_eval_episodes, const DecodeSpec& decode, std::uint64_t seed,
                      int sequences_per_episode = 16, std::optional<int> max_steps = std::nullopt,
                      int feature_dim = 0);

}  // namespace msl
