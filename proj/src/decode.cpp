#include "msl/decode.hpp"

#include <algorithm>
#include <cmath>

namespace msl {

namespace {

// Higher score first; equal scores by the smaller emitted path, with the
// eos step counted at its token id.
struct Better {
  int eos_id;

  bool operator()(const Hypothesis& a, const Hypothesis& b) const {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    const std::size_t na = a.tokens.size() + (a.finished ? 1 : 0);
    const std::size_t nb = b.tokens.size() + (b.finished ? 1 : 0);
    for (std::size_t i = 0; i < std::min(na, nb); ++i) {
      const int ta = i < a.tokens.size() ? a.tokens[i] : eos_id;
      const int tb = i < b.tokens.size() ? b.tokens[i] : eos_id;
      if (ta != tb) return ta < tb;
    }
    return na < nb;
  }
};

void check_distribution(const std::vector<double>& logp) {
  if (logp.empty()) throw ContractError("step scorer returned an empty distribution");
}

// Drops trailing pad columns so decoding sees the true source length.
TokenMatrix trim_row(const TokenMatrix& src, Index row) {
  Index len = src.cols();
  while (len > 1 && src(row, len - 1) == TokenLayout::pad) --len;
  return src.row(row).head(len);
}

std::optional<Tensor> feature_row(const std::optional<Tensor>& features, Index row, Index len) {
  if (!features) return std::nullopt;
  const Index s = features->dim(1), f = features->dim(2);
  Tensor out({1, len, f});
  out.values() = features->values().segment(row * s * f, len * f);
  return out;
}

}  // namespace

Hypothesis greedy_search(const StepScorer& scorer, int eos_id, int max_steps) {
  Hypothesis h;
  for (int step = 0; step < max_steps; ++step) {
    const std::vector<double> logp = scorer(h.tokens);
    check_distribution(logp);
    // max_element returns the first maximum, i.e. the lowest id
    const auto best = static_cast<int>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    h.log_prob += logp[static_cast<std::size_t>(best)];
    if (best == eos_id) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(best);
  }
  return h;
}

Hypothesis beam_search(const StepScorer& scorer, int eos_id, int beam_size, int max_steps) {
  if (beam_size < 1) throw ContractError("beam_search: beam size must be at least 1");
  const Better better{eos_id};
  std::vector<Hypothesis> beam(1);
  std::vector<Hypothesis> done;
  for (int step = 0; step < max_steps && !beam.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& h : beam) {
      const std::vector<double> logp = scorer(h.tokens);
      check_distribution(logp);
      for (std::size_t tok = 0; tok < logp.size(); ++tok) {
        Hypothesis next = h;
        next.log_prob += logp[tok];
        if (static_cast<int>(tok) == eos_id) {
          next.finished = true;
        } else {
          next.tokens.push_back(static_cast<int>(tok));
        }
        candidates.push_back(std::move(next));
      }
    }
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(beam_size), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    candidates.resize(keep);
    beam.clear();
    for (Hypothesis& h : candidates) {
      if (h.finished) {
        done.push_back(std::move(h));
      } else {
        beam.push_back(std::move(h));
      }
    }
    // scores only decrease with length, so no live hypothesis can overtake
    // a finished one that already beats all of them
    if (!done.empty() && !beam.empty()) {
      const Hypothesis& best_done = *std::min_element(done.begin(), done.end(), better);
      if (std::all_of(beam.begin(), beam.end(),
                      [&](const Hypothesis& h) { return h.log_prob < best_done.log_prob; })) {
        beam.clear();
      }
    }
  }
  for (Hypothesis& h : beam) done.push_back(std::move(h));
  // a narrow beam can prune the greedy path; never return less than it
  if (beam_size > 1) done.push_back(greedy_search(scorer, eos_id, max_steps));
  return *std::min_element(done.begin(), done.end(), better);
}

StepScorer model_scorer(const ParamSet& params, const ModelConfig& config, const TokenMatrix& src_row,
                        const std::optional<Tensor>& features_row) {
  Tensor memory;
  {
    Recording rec;
    ParamVars vars(rec, params, false);
    memory = encode(vars, config, src_row, features_row, {}).value();
  }
  return [&params, config, src_row, memory = std::move(memory)](std::span<const int> prefix) {
    const auto len = static_cast<Index>(prefix.size()) + 1;
    TokenMatrix tgt_in(1, len);
    tgt_in(0, 0) = TokenLayout::bos;
    for (Index i = 1; i < len; ++i) tgt_in(0, i) = prefix[static_cast<std::size_t>(i - 1)];
    Recording rec;
    ParamVars vars(rec, params, false);
    Var mem = rec.constant(memory);
    Var logits = decode(vars, config, mem, src_row, tgt_in, {});
    Var last = log_softmax_rows(reshape(logits, {len, config.tgt_vocab}));
    const auto row = last.value().matrix().row(len - 1);
    return std::vector<double>(row.data(), row.data() + row.size());
  };
}

std::vector<std::vector<int>> greedy_decode(const ParamSet& params, const ModelConfig& config,
                                            const TokenMatrix& src, int max_steps,
                                            const std::optional<Tensor>& features) {
  if (max_steps > config.max_len) throw ContractError("greedy_decode: max_steps exceeds max_len");
  std::vector<std::vector<int>> out;
  for (Index r = 0; r < src.rows(); ++r) {
    const TokenMatrix row = trim_row(src, r);
    const StepScorer scorer = model_scorer(params, config, row, feature_row(features, r, row.cols()));
    out.push_back(greedy_search(scorer, TokenLayout::eos, max_steps).tokens);
  }
  return out;
}

std::vector<std::vector<int>> beam_decode(const ParamSet& params, const ModelConfig& config,
                                          const TokenMatrix& src, int beam_size, int max_steps,
                                          const std::optional<Tensor>& features) {
  if (beam_size < 1) throw ContractError("beam_decode: beam size must be at least 1");
  if (max_steps > config.max_len) throw ContractError("beam_decode: max_steps exceeds max_len");
  std::vector<std::vector<int>> out;
  for (Index r = 0; r < src.rows(); ++r) {
    const TokenMatrix row = trim_row(src, r);
    const StepScorer scorer = model_scorer(params, config, row, feature_row(features, r, row.cols()));
    out.push_back(beam_search(scorer, TokenLayout::eos, beam_size, max_steps).tokens);
  }
  return out;
}

}  // namespace msl
