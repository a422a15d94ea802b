#include "msl/tasks.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "msl/random.hpp"

namespace msl {

namespace {

constexpr std::uint64_t kTaskStream = 0x7461736b;
constexpr std::uint64_t kEpisodeStream = 0x65706973;

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

SequenceBatch cipher_batch(const CipherLanguageTask& task, int k, Rng& rng) {
  std::vector<std::vector<int>> sources(static_cast<std::size_t>(k));
  std::vector<std::vector<int>> targets(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto len = static_cast<int>(task.min_len + rng.uniform_int(task.max_len - task.min_len + 1));
    auto& src = sources[static_cast<std::size_t>(i)];
    for (int j = 0; j < len; ++j) src.push_back(static_cast<int>(rng.uniform_int(task.alphabet)));
    auto& tgt = targets[static_cast<std::size_t>(i)];
    tgt = task.apply(src);
    for (int& s : tgt) {
      if (rng.bernoulli(task.noise_rate)) s = static_cast<int>(rng.uniform_int(task.alphabet));
    }
  }
  return make_sequence_batch(sources, targets);
}

RegressionBatch sinusoid_batch(const SinusoidTask& task, int k, Rng& rng) {
  Tensor x({k, 1});
  Tensor y({k, 1});
  for (int i = 0; i < k; ++i) {
    x[i] = rng.uniform(SinusoidTask::kMinX, SinusoidTask::kMaxX);
    y[i] = task.amplitude * std::sin(x[i] + task.phase);
  }
  return {std::move(x), std::move(y)};
}

RegressionBatch quadratic_batch(const QuadraticTask& task, int k, Rng& rng) {
  Tensor x({k, 1});
  Tensor y({k, 1});
  for (int i = 0; i < k; ++i) y[i] = task.optimum + (task.noise > 0.0 ? rng.uniform(-task.noise, task.noise) : 0.0);
  return {std::move(x), std::move(y)};
}

std::vector<int> symbols_until_eos(const TokenMatrix& m, Index row) {
  std::vector<int> out;
  for (Index j = 0; j < m.cols(); ++j) {
    const int t = m(row, j);
    if (t == TokenLayout::eos || t == TokenLayout::pad) break;
    out.push_back(t - TokenLayout::first_symbol);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ' ';
    if constexpr (std::is_same_v<T, double>) {
      s += format_double(values[i]);
    } else {
      s += std::to_string(values[i]);
    }
  }
  return s;
}

template <typename T>
std::vector<T> split_values(const std::string& field) {
  std::vector<T> out;
  std::istringstream in(field);
  std::string tok;
  while (in >> tok) {
    T v{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw FormatError("bad value '" + tok + "' in episode record");
    out.push_back(v);
  }
  return out;
}

void write_split(std::ostream& out, std::int64_t task_id, const char* split, const Batch& batch) {
  if (const auto* s = std::get_if<SequenceBatch>(&batch)) {
    for (Index r = 0; r < s->batch_size(); ++r) {
      out << task_id << '\t' << split << '\t' << join(source_symbols(*s, r)) << '\t'
          << join(target_symbols(*s, r)) << '\n';
    }
  } else {
    const auto& b = std::get<RegressionBatch>(batch);
    for (Index r = 0; r < b.size(); ++r) {
      const auto xr = b.x.matrix().row(r);
      const auto yr = b.y.matrix().row(r);
      out << task_id << '\t' << split << '\t' << join(std::vector<double>(xr.data(), xr.data() + xr.size()))
          << '\t' << join(std::vector<double>(yr.data(), yr.data() + yr.size())) << '\n';
    }
  }
}

}  // namespace

bool CipherLanguageTask::is_bijection() const {
  if (static_cast<int>(cipher.size()) != alphabet) return false;
  std::vector<bool> seen(cipher.size(), false);
  for (int c : cipher) {
    if (c < 0 || c >= alphabet || seen[static_cast<std::size_t>(c)]) return false;
    seen[static_cast<std::size_t>(c)] = true;
  }
  return true;
}

std::vector<int> CipherLanguageTask::inverse() const {
  std::vector<int> inv(cipher.size());
  for (std::size_t s = 0; s < cipher.size(); ++s) inv[static_cast<std::size_t>(cipher[s])] = static_cast<int>(s);
  return inv;
}

std::vector<int> CipherLanguageTask::apply(const std::vector<int>& symbols) const {
  std::vector<int> out;
  out.reserve(symbols.size());
  for (int s : symbols) out.push_back(cipher.at(static_cast<std::size_t>(s)));
  return out;
}

void TaskSampler::validate() const {
  if (k_support < 1 || k_target < 1) throw ConfigError("task.k-support and task.k-target must be at least 1");
  if (family == TaskFamily::cipher) {
    if (alphabet < 2) throw ConfigError("task.alphabet must be at least 2");
    if (min_len < 1 || max_len < min_len) throw ConfigError("task.min-len/max-len must satisfy 1 <= min <= max");
    if (!(noise >= 0.0 && noise < 0.5)) throw ConfigError("task.noise for cipher tasks must lie in [0, 0.5)");
  } else if (!(noise >= 0.0)) {
    throw ConfigError("task.noise must be non-negative");
  }
  if (feature_dim < 0) throw ConfigError("feature dimension must be non-negative");
}

Task sample_task(const TaskSampler& sampler, std::int64_t task_index) {
  if (task_index < 0) throw ContractError("sample_task: negative task index");
  Rng rng(derive_seed(sampler.master_seed, {kTaskStream, static_cast<std::uint64_t>(task_index)}));
  switch (sampler.family) {
    case TaskFamily::quadratic:
      return QuadraticTask{rng.uniform(-1.0, 1.0), sampler.noise};
    case TaskFamily::sinusoid: {
      const double amplitude = rng.uniform(SinusoidTask::kMinAmplitude, SinusoidTask::kMaxAmplitude);
      const double phase = rng.uniform(0.0, std::numbers::pi);
      return SinusoidTask{amplitude, phase};
    }
    case TaskFamily::cipher: {
      CipherLanguageTask task;
      task.alphabet = sampler.alphabet;
      task.min_len = sampler.min_len;
      task.max_len = sampler.max_len;
      task.noise_rate = sampler.noise;
      task.cipher.resize(static_cast<std::size_t>(sampler.alphabet));
      std::iota(task.cipher.begin(), task.cipher.end(), 0);
      for (int i = sampler.alphabet - 1; i > 0; --i) {
        std::swap(task.cipher[static_cast<std::size_t>(i)],
                  task.cipher[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
      }
      return task;
    }
  }
  throw ContractError("unknown task family");
}

Episode sample_episode(const Task& task, int k_support, int k_target, std::uint64_t episode_seed,
                       std::int64_t task_id, int feature_dim) {
  if (k_support < 1 || k_target < 1) throw ContractError("sample_episode: split sizes must be at least 1");
  Rng support_rng(derive_seed(episode_seed, {0}));
  Rng target_rng(derive_seed(episode_seed, {1}));
  Episode ep;
  ep.task_id = task_id;
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, CipherLanguageTask>) {
          SequenceBatch support = cipher_batch(t, k_support, support_rng);
          SequenceBatch target = cipher_batch(t, k_target, target_rng);
          if (feature_dim > 0) {
            support.features = render_features(support.src, feature_dim, derive_seed(episode_seed, {2}));
            target.features = render_features(target.src, feature_dim, derive_seed(episode_seed, {3}));
          }
          ep.support = std::move(support);
          ep.target = std::move(target);
        } else if constexpr (std::is_same_v<T, SinusoidTask>) {
          ep.support = sinusoid_batch(t, k_support, support_rng);
          ep.target = sinusoid_batch(t, k_target, target_rng);
        } else {
          ep.support = quadratic_batch(t, k_support, support_rng);
          ep.target = quadratic_batch(t, k_target, target_rng);
        }
      },
      task);
  return ep;
}

EpisodeSource make_episode_source(const TaskSampler& sampler, std::uint64_t seed) {
  sampler.validate();
  return [sampler, seed](long iteration, int slot) {
    const std::uint64_t s =
        derive_seed(seed, {kEpisodeStream, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(slot)});
    Rng rng(s);
    std::int64_t index;
    if (sampler.task_pool.empty()) {
      index = static_cast<std::int64_t>(rng.uniform_int(kHeldOutBase));
    } else {
      index = sampler.task_pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(sampler.task_pool.size())))];
    }
    return sample_episode(sample_task(sampler, index), sampler.k_support, sampler.k_target, rng.next(), index,
                          sampler.feature_dim);
  };
}

Tensor render_features(const TokenMatrix& src, int feature_dim, std::uint64_t seed) {
  if (feature_dim < 1) throw ContractError("render_features: feature dimension must be positive");
  Rng rng(seed);
  const Index b = src.rows(), s = src.cols(), f = feature_dim;
  Tensor out({b, s, f});
  for (Index i = 0; i < b; ++i)
    for (Index j = 0; j < s; ++j) {
      const int tok = src(i, j);
      if (tok == TokenLayout::pad) continue;
      // binary code of the token id plus jitter
      for (Index k = 0; k < f; ++k) {
        const double bit = ((tok >> k) & 1) ? 1.0 : -1.0;
        out[(i * s + j) * f + k] = bit + 0.1 * rng.normal();
      }
    }
  return out;
}

std::vector<int> source_symbols(const SequenceBatch& batch, Index row) { return symbols_until_eos(batch.src, row); }

std::vector<int> target_symbols(const SequenceBatch& batch, Index row) {
  return symbols_until_eos(batch.tgt_out, row);
}

void write_episode(std::ostream& out, const Episode& episode) {
  write_split(out, episode.task_id, "support", episode.support);
  write_split(out, episode.task_id, "target", episode.target);
}

std::vector<Episode> read_episodes(std::istream& in, TaskFamily family) {
  struct Split {
    std::vector<std::vector<int>> src_ids, tgt_ids;
    std::vector<std::vector<double>> xs, ys;
  };
  std::map<std::int64_t, std::pair<Split, Split>> grouped;
  std::vector<std::int64_t> order;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    if (line.back() == '\t') fields.emplace_back();
    if (fields.size() != 4) throw FormatError("episode record line " + std::to_string(line_no) + ": expected 4 fields");
    std::int64_t task_id = 0;
    {
      auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), task_id);
      if (ec != std::errc{}) throw FormatError("episode record line " + std::to_string(line_no) + ": bad task index");
    }
    if (!grouped.contains(task_id)) order.push_back(task_id);
    auto& pair = grouped[task_id];
    Split* split = fields[1] == "support" ? &pair.first : fields[1] == "target" ? &pair.second : nullptr;
    if (!split) throw FormatError("episode record line " + std::to_string(line_no) + ": unknown split '" + fields[1] + "'");
    if (family == TaskFamily::cipher) {
      split->src_ids.push_back(split_values<int>(fields[2]));
      split->tgt_ids.push_back(split_values<int>(fields[3]));
    } else {
      split->xs.push_back(split_values<double>(fields[2]));
      split->ys.push_back(split_values<double>(fields[3]));
    }
  }
  auto to_batch = [&](const Split& s) -> Batch {
    if (family == TaskFamily::cipher) {
      if (s.src_ids.empty()) throw FormatError("episode record has an empty split");
      return make_sequence_batch(s.src_ids, s.tgt_ids);
    }
    if (s.xs.empty()) throw FormatError("episode record has an empty split");
    const auto n = static_cast<Index>(s.xs.size());
    Tensor x({n, static_cast<Index>(s.xs[0].size())});
    Tensor y({n, static_cast<Index>(s.ys[0].size())});
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < x.cols(); ++j) x[i * x.cols() + j] = s.xs[static_cast<std::size_t>(i)].at(static_cast<std::size_t>(j));
      for (Index j = 0; j < y.cols(); ++j) y[i * y.cols() + j] = s.ys[static_cast<std::size_t>(i)].at(static_cast<std::size_t>(j));
    }
    return RegressionBatch{std::move(x), std::move(y)};
  };
  std::vector<Episode> out;
  for (std::int64_t id : order) {
    const auto& [support, target] = grouped[id];
    out.push_back(Episode{to_batch(support), to_batch(target), id});
  }
  return out;
}

}  // namespace msl
