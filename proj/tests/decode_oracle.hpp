#pragma once

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "msl/random.hpp"

namespace msl::test {

inline constexpr int kEos = 0;

inline std::vector<double> log_normalize(std::vector<double> w) {
  double z = 0.0;
  for (double v : w) z += v;
  for (double& v : w) v = std::log(v / z);
  return w;
}

// Next-token distribution drawn once per prefix from a seeded stream.
class TableScorer {
 public:
  TableScorer(int vocab, std::uint64_t seed, bool allow_ties = false)
      : vocab_(vocab), seed_(seed), ties_(allow_ties) {}

  std::vector<double> operator()(std::span<const int> prefix) {
    std::vector<int> key(prefix.begin(), prefix.end());
    auto it = table_.find(key);
    if (it != table_.end()) return it->second;
    std::uint64_t h = seed_;
    for (int t : key) h = derive_seed(h, {static_cast<std::uint64_t>(t)});
    Rng rng(derive_seed(h, {key.size()}));
    std::vector<double> w(static_cast<std::size_t>(vocab_));
    for (double& v : w) v = ties_ ? static_cast<double>(1 + rng.uniform_int(3)) : rng.uniform(0.05, 1.0);
    return table_[key] = log_normalize(w);
  }

 private:
  int vocab_;
  std::uint64_t seed_;
  bool ties_;
  std::map<std::vector<int>, std::vector<double>> table_;
};

struct Path {
  std::vector<int> tokens;
  double score;
  bool finished;
};

// Every complete hypothesis up to max_steps, ranked the same way as the decoder:
// score first, then the token path with the end marker counted at its id.
inline Path exhaustive_best(TableScorer& scorer, int vocab, int max_steps) {
  std::vector<Path> all;
  std::vector<Path> frontier{{{}, 0.0, false}};
  for (int step = 0; step < max_steps; ++step) {
    std::vector<Path> next;
    for (const Path& p : frontier) {
      const auto logp = scorer(p.tokens);
      for (int t = 0; t < vocab; ++t) {
        Path q = p;
        q.score += logp[static_cast<std::size_t>(t)];
        if (t == kEos) {
          q.finished = true;
          all.push_back(q);
        } else {
          q.tokens.push_back(t);
          next.push_back(q);
        }
      }
    }
    frontier = std::move(next);
  }
  for (Path& p : frontier) all.push_back(p);
  auto key = [](const Path& p) {
    std::vector<int> k = p.tokens;
    if (p.finished) k.push_back(kEos);
    return k;
  };
  Path best = all.front();
  for (const Path& p : all) {
    if (p.score > best.score || (p.score == best.score && key(p) < key(best))) best = p;
  }
  return best;
}


}  // namespace msl::test
