#include <doctest.h>

#include "decode_oracle.hpp"
#include "msl/decode.hpp"
#include "support.hpp"

using namespace msl;
using namespace msl::test;

TEST_CASE("greedy stops immediately when eos dominates") {
  auto scorer = [](std::span<const int>) { return log_normalize({0.7, 0.2, 0.1}); };
  const Hypothesis h = greedy_search(scorer, kEos, 10);
  CHECK(h.tokens.empty());
  CHECK(h.finished);
}

TEST_CASE("greedy follows a rigged script") {
  // emits 1, 2, 3 and then eos
  auto scorer = [](std::span<const int> prefix) {
    std::vector<double> w(4, 0.1);
    w[prefix.size() < 3 ? prefix.size() + 1 : kEos] = 5.0;
    return log_normalize(w);
  };
  const Hypothesis h = greedy_search(scorer, kEos, 10);
  CHECK(h.tokens == std::vector<int>{1, 2, 3});
  CHECK(h.finished);
  CHECK(greedy_search(scorer, kEos, 2).tokens == std::vector<int>{1, 2});
  CHECK_FALSE(greedy_search(scorer, kEos, 2).finished);
}

TEST_CASE("greedy breaks ties toward the lowest id") {
  auto scorer = [](std::span<const int> prefix) {
    return prefix.empty() ? log_normalize({0.2, 0.4, 0.4}) : log_normalize({1.0, 0.0001, 0.0001});
  };
  CHECK(greedy_search(scorer, kEos, 5).tokens == std::vector<int>{1});
}

TEST_CASE("beam search recovers the branch greedy misses") {
  // tokens: 0 = eos, 1 = a, 2 = b
  auto scorer = [](std::span<const int> prefix) -> std::vector<double> {
    if (prefix.empty()) return log_normalize({1e-9, 0.6, 0.4});
    if (prefix.size() == 1 && prefix[0] == 1) return log_normalize({1e-9, 0.5, 0.5});
    if (prefix.size() == 1 && prefix[0] == 2) return log_normalize({1e-9, 1e-9, 1.0});
    return log_normalize({1.0, 1e-9, 1e-9});
  };
  const Hypothesis greedy = greedy_search(scorer, kEos, 3);
  CHECK(greedy.tokens == std::vector<int>{1, 1});
  const Hypothesis beam = beam_search(scorer, kEos, 2, 3);
  CHECK(beam.tokens == std::vector<int>{2, 2});
  CHECK(std::exp(beam.log_prob) == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(std::exp(greedy.log_prob) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("beam of one equals greedy on 100 random tables") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TableScorer t1(4 + static_cast<int>(seed % 3), seed, seed % 2 == 0);
    TableScorer t2 = t1;
    const Hypothesis g = greedy_search(std::ref(t1), kEos, 6);
    const Hypothesis b = beam_search(std::ref(t2), kEos, 1, 6);
    CHECK(g.tokens == b.tokens);
    CHECK(g.log_prob == b.log_prob);
  }
}

TEST_CASE("beam score is never below greedy") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TableScorer t(5, seed + 1000);
    const double g = greedy_search(std::ref(t), kEos, 5).log_prob;
    for (int k : {1, 2, 3, 5}) CHECK(beam_search(std::ref(t), kEos, k, 5).log_prob >= g);
  }
}

TEST_CASE("wide beam matches exhaustive enumeration") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    for (int vocab = 2; vocab <= 4; ++vocab) {
      for (int steps = 1; steps <= 3; ++steps) {
        TableScorer t(vocab, seed * 31 + static_cast<std::uint64_t>(vocab), seed % 3 == 0);
        const Path best = exhaustive_best(t, vocab, steps);
        const int width = static_cast<int>(std::pow(vocab, steps));
        const Hypothesis h = beam_search(std::ref(t), kEos, width, steps);
        CHECK(h.tokens == best.tokens);
        CHECK(h.finished == best.finished);
        CHECK(h.log_prob == doctest::Approx(best.score).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("model decoding") {
  ModelConfig c = ModelConfig::desk();
  c.src_vocab = c.tgt_vocab = TokenLayout::vocab_for_alphabet(6);
  const std::vector<std::vector<int>> src{{0, 1, 2}, {3, 4}};
  const std::vector<std::vector<int>> tgt{{1}, {2}};
  const SequenceBatch batch = make_sequence_batch(src, tgt);

  SUBCASE("eos-favoring model emits nothing") {
    ParamSet p = init_params(c, 1);
    p.at("out.bias")[TokenLayout::eos] = 50.0;
    const auto out = greedy_decode(p, c, batch.src, 8);
    CHECK(out == std::vector<std::vector<int>>{{}, {}});
  }
  SUBCASE("rigged position script") {
    ParamSet p = init_params(c, 1);
    p.at("out.weight").values().setZero();
    p.at("out.bias")[4] = 30.0;
    // always token 4: runs to the step limit
    const auto out = greedy_decode(p, c, batch.src, 3);
    CHECK(out[0] == std::vector<int>{4, 4, 4});
  }
  SUBCASE("beam one equals greedy and decoding is deterministic") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ParamSet p = init_params(c, seed);
      const auto g = greedy_decode(p, c, batch.src, 6);
      CHECK(g == greedy_decode(p, c, batch.src, 6));
      CHECK(g == beam_decode(p, c, batch.src, 1, 6));
    }
  }
  SUBCASE("guards") {
    const ParamSet p = init_params(c, 1);
    CHECK_THROWS_AS(beam_decode(p, c, batch.src, 0, 4), ContractError);
    CHECK_THROWS_AS(greedy_decode(p, c, batch.src, c.max_len + 1), ContractError);
    CHECK_THROWS_AS(beam_search([](std::span<const int>) { return std::vector<double>{0.0}; }, kEos, 0, 3),
                    ContractError);
  }
}
