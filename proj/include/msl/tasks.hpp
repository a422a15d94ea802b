#pragma once

#include <cstdint>
#include <iosfwd>
#include <variant>
#include <vector>

#include "msl/meta.hpp"

namespace msl {

enum class TaskFamily { quadratic, sinusoid, cipher };

/// Loss (theta - c)^2 around a task-specific optimum c in [-1, 1]; targets
/// are c plus optional uniform scatter of half-width `noise`.
struct QuadraticTask {
  double optimum = 0.0;
  double noise = 0.0;
};

/// y = amplitude * sin(x + phase), x in [-5, 5].
struct SinusoidTask {
  double amplitude = 1.0;
  double phase = 0.0;

  static constexpr double kMinAmplitude = 0.1;
  static constexpr double kMaxAmplitude = 5.0;
  static constexpr double kMinX = -5.0;
  static constexpr double kMaxX = 5.0;
};

/// A synthetic "language": a substitution cipher over an alphabet with
/// noisy transcription.
struct CipherLanguageTask {
  int alphabet = 20;
  std::vector<int> cipher;  // symbol -> enciphered symbol
  int min_len = 5;
  int max_len = 15;
  double noise_rate = 0.1;

  bool is_bijection() const;
  std::vector<int> inverse() const;
  std::vector<int> apply(const std::vector<int>& symbols) const;
};

using Task = std::variant<QuadraticTask, SinusoidTask, CipherLanguageTask>;

/// Held-out tasks are numbered from here so they never collide with
/// meta-training draws.
inline constexpr std::int64_t kHeldOutBase = std::int64_t{1} << 40;

struct TaskSampler {
  TaskFamily family = TaskFamily::cipher;
  std::uint64_t master_seed = 0;
  int k_support = 8;
  int k_target = 8;

  int alphabet = 20;
  int min_len = 5;
  int max_len = 15;
  double noise = 0.1;  // cipher noise rate, or quadratic scatter
  int feature_dim = 0;  // render feature maps for a conv front-end when > 0

  /// Task indices available for meta-training; empty means the whole family.
  std::vector<std::int64_t> task_pool;

  void validate() const;
};

/// Deterministic in (master seed, index).
Task sample_task(const TaskSampler& sampler, std::int64_t task_index);

/// Support and target sets drawn independently from one task.
Episode sample_episode(const Task& task, int k_support, int k_target, std::uint64_t episode_seed,
                       std::int64_t task_id = 0, int feature_dim = 0);

/// Index of the j-th held-out task.
constexpr std::int64_t heldout_task_index(std::int64_t j) { return kHeldOutBase + j; }

/// Episode stream for meta-training: a deterministic function of
/// (seed, iteration, slot).
EpisodeSource make_episode_source(const TaskSampler& sampler, std::uint64_t seed);

/// Noisy per-frame feature maps [B x S x feature_dim] standing in for
/// spectrogram input; pad frames are zero.
Tensor render_features(const TokenMatrix& src, int feature_dim, std::uint64_t seed);

/// Alphabet symbols of row `row` up to (excluding) the first eos.
std::vector<int> source_symbols(const SequenceBatch& batch, Index row);
std::vector<int> target_symbols(const SequenceBatch& batch, Index row);

/// Line records "task_index<TAB>split<TAB>source<TAB>target" with
/// space-separated ids (or values for regression tasks).
void write_episode(std::ostream& out, const Episode& episode);
std::vector<Episode> read_episodes(std::istream& in, TaskFamily family);

}  // namespace msl
