#include <doctest.h>

#include <string>

#include "msl/evaluate.hpp"
#include "msl/metrics.hpp"
#include "support.hpp"

using namespace msl;

namespace {

// Full-matrix Levenshtein.
std::size_t dp_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] != b[j - 1]);
      d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  return d[a.size()][b.size()];
}

std::vector<int> random_string(Rng& rng, int max_len, int alphabet, int min_len = 0) {
  std::vector<int> s(static_cast<std::size_t>(min_len + rng.uniform_int(max_len - min_len + 1)));
  for (int& c : s) c = static_cast<int>(rng.uniform_int(alphabet));
  return s;
}

double cer_str(const std::string& r, const std::string& h) { return cer(std::span(r), std::span(h)); }

}  // namespace

TEST_CASE("cer examples") {
  CHECK(cer_str("abc", "abc") == 0.0);
  CHECK(cer_str("ab", "") == 1.0);
  CHECK(cer_str("abc", "axc") == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(cer_str("a", "bcd") == 3.0);
  CHECK(cer_str("kitten", "sitting") == doctest::Approx(0.5));
  CHECK_THROWS_AS(cer_str("", "abc"), ContractError);
}

TEST_CASE("cer matches the dynamic programming oracle") {
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const auto r = random_string(rng, 12, 1 + i % 6, 1);
    const auto h = random_string(rng, 12, 1 + i % 6);
    const std::size_t d = dp_distance(r, h);
    CHECK(edit_distance(std::span<const int>(r), std::span<const int>(h)) == d);
    CHECK(cer(r, h) == static_cast<double>(d) / static_cast<double>(r.size()));
  }
}

TEST_CASE("cer respects the triangle inequality through a midpoint") {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto r = random_string(rng, 10, 4, 1);
    const auto h = random_string(rng, 10, 4);
    const auto m = random_string(rng, 10, 4);
    const double bound = static_cast<double>(dp_distance(r, m) + dp_distance(m, h)) / static_cast<double>(r.size());
    CHECK(cer(r, h) <= bound);
  }
}

TEST_CASE("curve_stats examples") {
  SUBCASE("constant curve") {
    const std::vector<double> flat(10, 0.7);
    const CurveStats s = curve_stats(flat, 3, 1.0);
    CHECK(s.mean_abs_successive_diff == 0.0);
    CHECK(s.windowed_std == 0.0);
    CHECK(s.max_spike == 0.0);
    CHECK(s.auc == doctest::Approx(0.7).epsilon(1e-15));
    REQUIRE(s.iters_to_threshold.has_value());
    CHECK(*s.iters_to_threshold == 0);
    CHECK_FALSE(curve_stats(flat, 3, 0.5).iters_to_threshold.has_value());
    CHECK_FALSE(curve_stats(flat, 3).iters_to_threshold.has_value());
  }
  SUBCASE("alternating curve") {
    const std::vector<double> l{1, 3, 1, 3};
    const CurveStats s = curve_stats(l, 2);
    CHECK(s.mean_abs_successive_diff == 2.0);
    CHECK(s.max_spike == 2.0);
    CHECK(s.windowed_std == 1.0);
    CHECK(s.auc == 2.0);
  }
  SUBCASE("decreasing curve has no spike") {
    const std::vector<double> l{5, 4, 2.5, 2, 1, 0.5};
    const CurveStats s = curve_stats(l, 2, 1.8);
    CHECK(s.max_spike == 0.0);
    CHECK(s.mean_abs_successive_diff == doctest::Approx(4.5 / 5));
    REQUIRE(s.iters_to_threshold.has_value());
    CHECK(*s.iters_to_threshold == 4);  // trailing mean of (2, 1) is 1.5
  }
  SUBCASE("records") {
    std::vector<RunRecord> recs(4);
    for (int i = 0; i < 4; ++i) recs[static_cast<std::size_t>(i)].outer_loss = i % 2 ? 3.0 : 1.0;
    CHECK(curve_stats(std::span<const RunRecord>(recs), 2).max_spike == 2.0);
  }
  SUBCASE("guards") {
    const std::vector<double> one{1.0};
    const std::vector<double> two{1.0, 2.0};
    CHECK_THROWS_AS(curve_stats(one, 2), ContractError);
    CHECK_THROWS_AS(curve_stats(two, 1), ContractError);
  }
}

TEST_CASE("curve_stats scales with the curve") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> l(static_cast<std::size_t>(2 + rng.uniform_int(60)));
    for (double& v : l) v = rng.uniform(0.0, 3.0);
    const int window = 2 + static_cast<int>(rng.uniform_int(8));
    const CurveStats base = curve_stats(l, window);
    CHECK(base.windowed_std >= 0.0);
    CHECK(base.mean_abs_successive_diff >= 0.0);
    for (double c : {0.25, 2.0, 8.0}) {
      std::vector<double> scaled = l;
      for (double& v : scaled) v *= c;
      const CurveStats s = curve_stats(scaled, window);
      CHECK(s.mean_abs_successive_diff == c * base.mean_abs_successive_diff);
      CHECK(s.windowed_std == c * base.windowed_std);
      CHECK(s.max_spike == c * base.max_spike);
    }
    const double c = rng.uniform(0.1, 10.0);
    std::vector<double> scaled = l;
    for (double& v : scaled) v *= c;
    const CurveStats s = curve_stats(scaled, window);
    CHECK(s.mean_abs_successive_diff == doctest::Approx(c * base.mean_abs_successive_diff).epsilon(1e-12));
    CHECK(s.windowed_std == doctest::Approx(c * base.windowed_std).epsilon(1e-12));
    CHECK(s.max_spike == doctest::Approx(c * base.max_spike).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_model") {
  ModelConfig c = ModelConfig::desk();
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = 8;

  SUBCASE("a model that has learned the cipher scores zero") {
    c.src_vocab = c.tgt_vocab = TokenLayout::vocab_for_alphabet(5);
    CipherLanguageTask task;
    task.alphabet = 5;
    task.cipher = {3, 0, 4, 1, 2};
    task.min_len = 2;
    task.max_len = 5;
    task.noise_rate = 0.0;
    const LossFn loss = [&c](const ParamVars& p, const Batch& b, const LossContext& ctx) {
      return sequence_nll(p, c, std::get<SequenceBatch>(b), {ctx.train_mode, ctx.dropout_seed});
    };
    const ParamSet trained =
        fine_tune(init_params(c, 3), sample_episode(task, 256, 1, 77).support, {30, 0.1, 8, 1}, loss);
    CHECK(evaluate_model(trained, c, task, 3, {DecodeKind::greedy, 1}, 11) == 0.0);
    CHECK(evaluate_model(trained, c, task, 3, {DecodeKind::beam, 3}, 11) == 0.0);
  }
  SUBCASE("an untrained model is near chance") {
    TaskSampler s;
    s.alphabet = 40;
    s.min_len = 5;
    s.max_len = 7;
    c.src_vocab = c.tgt_vocab = TokenLayout::vocab_for_alphabet(40);
    const auto task = std::get<CipherLanguageTask>(sample_task(s, 0));
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const ParamSet p = init_params(c, seed);
      const double greedy = evaluate_model(p, c, task, 2, {DecodeKind::greedy, 1}, seed);
      CHECK(greedy >= 0.8);
      CHECK(evaluate_model(p, c, task, 2, {DecodeKind::beam, 1}, seed) == greedy);
      CHECK(evaluate_model(p, c, task, 2, {DecodeKind::greedy, 1}, seed) == greedy);
    }
    CHECK_THROWS_AS(evaluate_model(init_params(c, 0), c, task, 0, {DecodeKind::greedy, 1}, 0), ContractError);
  }
}
