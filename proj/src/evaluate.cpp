#include "msl/evaluate.hpp"

#include "msl/metrics.hpp"
#include "msl/random.hpp"

namespace msl {

std::vector<std::vector<int>> decode_sources(const ParamSet& params, const ModelConfig& config,
                                             const SequenceBatch& batch, const DecodeSpec& decode,
                                             int max_steps) {
  if (decode.kind == DecodeKind::greedy) {
    return greedy_decode(params, config, batch.src, max_steps, batch.features);
  }
  return beam_decode(params, config, batch.src, decode.beam_size, max_steps, batch.features);
}

double evaluate_model(const ParamSet& params, const ModelConfig& config, const CipherLanguageTask& task,
                      int n_eval_episodes, const DecodeSpec& decode, std::uint64_t seed,
                      int sequences_per_episode, std::optional<int> max_steps, int feature_dim) {
  if (n_eval_episodes < 1) throw ContractError("evaluate_model: need at least one episode");
  const int steps = max_steps.value_or(std::min(config.max_len, task.max_len + 1));
  double total = 0.0;
  long count = 0;
  for (int e = 0; e < n_eval_episodes; ++e) {
    const Episode ep = sample_episode(task, 1, sequences_per_episode,
                                      derive_seed(seed, {static_cast<std::uint64_t>(e)}), 0, feature_dim);
    const auto& target = std::get<SequenceBatch>(ep.target);
    const auto hyps = decode_sources(params, config, target, decode, steps);
    for (Index r = 0; r < target.batch_size(); ++r) {
      std::vector<int> ref;
      for (Index j = 0; j < target.tgt_out.cols() && target.tgt_out(r, j) != TokenLayout::eos; ++j) {
        ref.push_back(target.tgt_out(r, j));
      }
      total += cer(ref, hyps[static_cast<std::size_t>(r)]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace msl
