#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "msl/metrics.hpp"
#include "msl/model.hpp"
#include "msl/regression.hpp"

namespace msl {

using Batch = std::variant<SequenceBatch, RegressionBatch>;

Index batch_rows(const Batch& batch);
Batch select_rows(const Batch& batch, std::span<const Index> rows);

/// One task's adaptation split and evaluation split.
struct Episode {
  Batch support;
  Batch target;
  std::int64_t task_id = 0;
};

/// FNV-1a digest of an episode's contents, used to check that two runs
/// consumed the same episode stream.
std::uint64_t episode_digest(const Episode& episode, std::uint64_t seed = 0xcbf29ce484222325ULL);

struct LossContext {
  bool train_mode = false;
  std::uint64_t dropout_seed = 0;
};

/// Differentiable scalar loss of the bound parameters on a batch.
using LossFn = std::function<Var(const ParamVars& params, const Batch& batch, const LossContext& ctx)>;

struct InnerConfig {
  int n_steps = 5;
  double alpha = 0.01;
  /// Also evaluate the target loss at the unadapted parameters, giving
  /// n_steps + 1 weighted terms.
  bool include_step_zero = false;

  void validate() const;
  int n_target_losses() const { return n_steps + (include_step_zero ? 1 : 0); }
};

/// Per-step importance weights as a function of the outer iteration.
///
/// Every non-final weight decays linearly from 1/N to a floor; the final
/// weight takes the remainder, so the weights always sum to one and drift
/// toward the last step as training proceeds.
class WeightSchedule {
 public:
  WeightSchedule(int n_steps, double decay_per_iter, double floor);

  /// Decay reaching the floor after 80% of `n_outer_iters`, floor 0.03/N.
  static WeightSchedule annealed(int n_steps, long n_outer_iters);

  /// All weight on the final step at every iteration.
  static WeightSchedule final_only(int n_steps);

  std::vector<double> weights_at(long t) const;

  int n_steps() const { return n_steps_; }
  double decay_per_iter() const { return decay_; }
  double floor() const { return floor_; }
  bool is_final_only() const { return final_only_; }

 private:
  WeightSchedule() = default;

  int n_steps_ = 1;
  double decay_ = 0.0;
  double floor_ = 1.0;
  bool final_only_ = false;
};

std::vector<double> one_hot_last(int n);

enum class MetaMode { maml, msl };
enum class OptimizerKind { sgd, adam };

struct OuterConfig {
  double meta_lr = 1e-3;
  int meta_batch_size = 4;
  long n_outer_iters = 1000;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  MetaMode mode = MetaMode::msl;

  void validate() const;
};

/// Parameters after each inner step and the support loss that produced it.
struct AdaptTrajectory {
  ParamSet start;                     // theta_0
  std::vector<ParamSet> params;       // theta_1 ... theta_N
  std::vector<double> support_losses; // L^S_0 ... L^S_{N-1}
};

/// N plain SGD steps on the support loss, starting from `theta`.
AdaptTrajectory inner_adapt(const ParamSet& theta, const Batch& support, const InnerConfig& config,
                            const LossFn& loss_fn, std::uint64_t dropout_seed = 0);

/// Target loss after every inner step (dropout off). With
/// `include_step_zero` the unadapted loss is prepended.
std::vector<double> per_step_target_losses(const AdaptTrajectory& trajectory, const Batch& target,
                                           const LossFn& loss_fn, bool include_step_zero = false);

/// Weighted sum of per-step losses. Weights must sum to one within 1e-9.
Var msl_combine(std::span<const Var> losses, std::span<const double> weights);
double msl_combine(std::span<const double> losses, std::span<const double> weights);

struct OuterGradient {
  ParamSet grad;                  // averaged over episodes
  double loss = 0.0;              // combined loss (msl) or final-step loss (maml), averaged
  std::vector<double> step_losses;  // per-step target losses, averaged
  std::vector<double> weights;    // weights actually applied
};

/// First-order meta-gradient. Each per-step gradient is taken with the
/// adapted parameters as leaves and applied to `theta` unchanged. In msl mode
/// steps with zero weight contribute nothing; in maml mode only the final
/// step contributes. Episode results are reduced in episode order, so the
/// result does not depend on `threads`.
OuterGradient outer_grad(const ParamSet& theta, std::span<const Episode> episodes, const InnerConfig& inner,
                         std::span<const double> weights, MetaMode mode, const LossFn& loss_fn,
                         std::uint64_t seed = 0, int threads = 1);

OuterGradient outer_grad(const ParamSet& theta, std::span<const Episode> episodes, const InnerConfig& inner,
                         const WeightSchedule& schedule, long t, MetaMode mode, const LossFn& loss_fn,
                         std::uint64_t seed = 0, int threads = 1);

/// Outer-loop update rule (SGD or Adam with bias correction).
class OuterOptimizer {
 public:
  explicit OuterOptimizer(const OuterConfig& config);

  void step(ParamSet& params, const ParamSet& grad);

 private:
  OuterConfig config_;
  long steps_ = 0;
  std::optional<ParamSet> first_moment_;
  std::optional<ParamSet> second_moment_;
};

/// Episode for slot `slot` of outer iteration `iteration`.
using EpisodeSource = std::function<Episode(long iteration, int slot)>;

struct TrainResult {
  ParamSet params;
  std::vector<RunRecord> records;
  std::uint64_t episode_hash = 0;
  std::optional<DivergenceError> divergence;  // set when training aborted early
};

/// Meta-training loop. Deterministic for fixed inputs; a divergence stops the
/// loop and is reported in the result together with the records so far.
TrainResult meta_train(const ParamSet& theta0, const EpisodeSource& episodes, const InnerConfig& inner,
                       const OuterConfig& outer, const WeightSchedule& schedule, std::uint64_t seed,
                       const LossFn& loss_fn, const std::function<void(const RunRecord&)>& on_record = {},
                       int threads = 1);

struct FineTuneConfig {
  int epochs = 10;
  double lr = 0.1;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

/// Minibatch SGD over `train_data` with a seeded shuffle per epoch.
ParamSet fine_tune(const ParamSet& theta, const Batch& train_data, const FineTuneConfig& config,
                   const LossFn& loss_fn);

}  // namespace msl
