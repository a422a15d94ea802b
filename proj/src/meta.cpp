#include "msl/meta.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "msl/random.hpp"

namespace msl {

namespace {

struct Fnv {
  std::uint64_t h;

  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
  void tokens(const TokenMatrix& m) {
    value(m.rows());
    value(m.cols());
    bytes(m.data(), sizeof(int) * static_cast<std::size_t>(m.size()));
  }
  void tensor(const Tensor& t) {
    for (Index d : t.shape()) value(d);
    bytes(t.data(), sizeof(double) * static_cast<std::size_t>(t.size()));
  }
  void batch(const Batch& b) {
    if (const auto* s = std::get_if<SequenceBatch>(&b)) {
      value(0);
      tokens(s->src);
      tokens(s->tgt_in);
      tokens(s->tgt_out);
      if (s->features) tensor(*s->features);
    } else {
      const auto& r = std::get<RegressionBatch>(b);
      value(1);
      tensor(r.x);
      tensor(r.y);
    }
  }
};

void check_finite(double loss, const char* what, std::ptrdiff_t step, std::ptrdiff_t episode = -1) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string("non-finite ") + what + " at step " + std::to_string(step), step, episode);
  }
}

double eval_loss(const ParamSet& params, const Batch& batch, const LossFn& loss_fn, const LossContext& ctx) {
  Recording rec;
  ParamVars vars(rec, params, false);
  return loss_fn(vars, batch, ctx).item();
}

std::pair<double, ParamSet> loss_and_grad(const ParamSet& params, const Batch& batch, const LossFn& loss_fn,
                                          const LossContext& ctx) {
  Recording rec;
  ParamVars vars(rec, params, true);
  Var loss = loss_fn(vars, batch, ctx);
  const double value = loss.item();
  if (!std::isfinite(value)) return {value, ParamSet{}};
  return {value, vars.gradients(rec.backward(loss))};
}

void check_weights(std::span<const double> weights, std::size_t n) {
  if (weights.size() != n) {
    throw ContractError("expected " + std::to_string(n) + " weights, got " + std::to_string(weights.size()));
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("weights must sum to 1, got " + std::to_string(total));
}

struct EpisodeOutcome {
  ParamSet grad;
  double loss = 0.0;
  std::vector<double> step_losses;
};

EpisodeOutcome run_episode(const ParamSet& theta, const Episode& ep, std::ptrdiff_t index,
                           const InnerConfig& inner, std::span<const double> weights, MetaMode mode,
                           const LossFn& loss_fn, std::uint64_t seed) {
  AdaptTrajectory traj;
  try {
    traj = inner_adapt(theta, ep.support, inner, loss_fn, seed);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " in episode " + std::to_string(index), e.step(), index);
  }
  std::vector<const ParamSet*> points;
  if (inner.include_step_zero) points.push_back(&traj.start);
  for (const ParamSet& p : traj.params) points.push_back(&p);

  EpisodeOutcome out;
  bool have_grad = false;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const bool last = k + 1 == points.size();
    const bool wanted = mode == MetaMode::msl ? weights[k] != 0.0 : last;
    double loss;
    if (wanted) {
      auto [value, grad] = loss_and_grad(*points[k], ep.target, loss_fn, {});
      loss = value;
      check_finite(loss, "target loss", static_cast<std::ptrdiff_t>(k), index);
      if (mode == MetaMode::maml) {
        out.grad = std::move(grad);
      } else if (!have_grad) {
        for (auto& [name, t] : grad) t.values() *= weights[k];
        out.grad = std::move(grad);
      } else {
        axpy(weights[k], grad, out.grad);
      }
      have_grad = true;
    } else {
      loss = eval_loss(*points[k], ep.target, loss_fn, {});
      check_finite(loss, "target loss", static_cast<std::ptrdiff_t>(k), index);
    }
    out.step_losses.push_back(loss);
  }
  out.loss = mode == MetaMode::msl ? msl_combine(out.step_losses, weights) : out.step_losses.back();
  return out;
}

}  // namespace

Index batch_rows(const Batch& batch) {
  return std::visit(
      [](const auto& b) -> Index {
        if constexpr (std::is_same_v<std::decay_t<decltype(b)>, SequenceBatch>) {
          return b.batch_size();
        } else {
          return b.size();
        }
      },
      batch);
}

Batch select_rows(const Batch& batch, std::span<const Index> rows) {
  return std::visit([&](const auto& b) -> Batch { return select_rows(b, rows); }, batch);
}

std::uint64_t episode_digest(const Episode& episode, std::uint64_t seed) {
  Fnv f{seed};
  f.value(episode.task_id);
  f.batch(episode.support);
  f.batch(episode.target);
  return f.h;
}

void InnerConfig::validate() const {
  if (n_steps < 1) throw ConfigError("inner.n-steps must be at least 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("inner.alpha must be a non-negative number");
}

void OuterConfig::validate() const {
  if (!(meta_lr > 0.0)) throw ConfigError("outer.meta-lr must be positive");
  if (meta_batch_size < 1) throw ConfigError("outer.meta-batch-size must be at least 1");
  if (n_outer_iters < 0) throw ConfigError("outer.n-outer-iters must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("outer.beta1/beta2 must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("outer.epsilon must be positive");
}

AdaptTrajectory inner_adapt(const ParamSet& theta, const Batch& support, const InnerConfig& config,
                            const LossFn& loss_fn, std::uint64_t dropout_seed) {
  config.validate();
  AdaptTrajectory traj;
  traj.start = theta;
  const ParamSet* current = &traj.start;
  for (int i = 0; i < config.n_steps; ++i) {
    auto [loss, grad] = loss_and_grad(*current, support, loss_fn,
                                      {true, derive_seed(dropout_seed, {static_cast<std::uint64_t>(i)})});
    check_finite(loss, "support loss", i);
    traj.support_losses.push_back(loss);
    traj.params.push_back(sgd_step(*current, grad, config.alpha));
    current = &traj.params.back();
  }
  return traj;
}

std::vector<double> per_step_target_losses(const AdaptTrajectory& trajectory, const Batch& target,
                                           const LossFn& loss_fn, bool include_step_zero) {
  if (trajectory.params.empty()) throw ContractError("per_step_target_losses: empty trajectory");
  std::vector<double> out;
  if (include_step_zero) {
    out.push_back(eval_loss(trajectory.start, target, loss_fn, {}));
    check_finite(out.back(), "target loss", 0);
  }
  for (const ParamSet& p : trajectory.params) {
    out.push_back(eval_loss(p, target, loss_fn, {}));
    check_finite(out.back(), "target loss", static_cast<std::ptrdiff_t>(out.size() - 1));
  }
  return out;
}

Var msl_combine(std::span<const Var> losses, std::span<const double> weights) {
  if (losses.empty()) throw ContractError("msl_combine: no losses");
  check_weights(weights, losses.size());
  Var total = scale(losses[0], weights[0]);
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, scale(losses[i], weights[i]));
  return total;
}

double msl_combine(std::span<const double> losses, std::span<const double> weights) {
  if (losses.empty()) throw ContractError("msl_combine: no losses");
  check_weights(weights, losses.size());
  double total = weights[0] * losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = total + weights[i] * losses[i];
  return total;
}

OuterGradient outer_grad(const ParamSet& theta, std::span<const Episode> episodes, const InnerConfig& inner,
                         std::span<const double> weights, MetaMode mode, const LossFn& loss_fn,
                         std::uint64_t seed, int threads) {
  if (episodes.empty()) throw ContractError("outer_grad: no episodes");
  inner.validate();
  const auto n_terms = static_cast<std::size_t>(inner.n_target_losses());
  std::vector<double> applied = mode == MetaMode::msl
                                    ? std::vector<double>(weights.begin(), weights.end())
                                    : one_hot_last(static_cast<int>(n_terms));
  check_weights(applied, n_terms);

  std::vector<std::optional<EpisodeOutcome>> outcomes(episodes.size());
  std::vector<std::exception_ptr> errors(episodes.size());
  auto work = [&](std::size_t e) {
    try {
      outcomes[e] = run_episode(theta, episodes[e], static_cast<std::ptrdiff_t>(e), inner, applied, mode,
                                loss_fn, derive_seed(seed, {e}));
    } catch (...) {
      errors[e] = std::current_exception();
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || episodes.size() == 1) {
    for (std::size_t e = 0; e < episodes.size(); ++e) work(e);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, episodes.size()); ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t e = w; e < episodes.size(); e += workers) work(e);
      });
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  OuterGradient out;
  out.weights = applied;
  out.grad = std::move(outcomes[0]->grad);
  out.step_losses = outcomes[0]->step_losses;
  out.loss = outcomes[0]->loss;
  for (std::size_t e = 1; e < episodes.size(); ++e) {
    axpy(1.0, outcomes[e]->grad, out.grad);
    for (std::size_t k = 0; k < n_terms; ++k) out.step_losses[k] += outcomes[e]->step_losses[k];
    out.loss += outcomes[e]->loss;
  }
  const double inv = 1.0 / static_cast<double>(episodes.size());
  for (auto& [name, t] : out.grad) t.values() *= inv;
  for (double& l : out.step_losses) l *= inv;
  out.loss *= inv;
  return out;
}

OuterGradient outer_grad(const ParamSet& theta, std::span<const Episode> episodes, const InnerConfig& inner,
                         const WeightSchedule& schedule, long t, MetaMode mode, const LossFn& loss_fn,
                         std::uint64_t seed, int threads) {
  if (schedule.n_steps() != inner.n_target_losses()) {
    throw ContractError("schedule covers " + std::to_string(schedule.n_steps()) + " steps, expected " +
                        std::to_string(inner.n_target_losses()));
  }
  return outer_grad(theta, episodes, inner, schedule.weights_at(t), mode, loss_fn, seed, threads);
}

OuterOptimizer::OuterOptimizer(const OuterConfig& config) : config_(config) { config_.validate(); }

void OuterOptimizer::step(ParamSet& params, const ParamSet& grad) {
  check_same_structure(params, grad);
  ++steps_;
  if (config_.optimizer == OptimizerKind::sgd) {
    axpy(-config_.meta_lr, grad, params);
    return;
  }
  if (!first_moment_) {
    first_moment_ = params.zeros_like();
    second_moment_ = params.zeros_like();
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  auto g = grad.begin();
  auto m = first_moment_->begin();
  auto v = second_moment_->begin();
  for (auto p = params.begin(); p != params.end(); ++p, ++g, ++m, ++v) {
    auto gv = g->second.values().array();
    m->second.values().array() = b1 * m->second.values().array() + (1.0 - b1) * gv;
    v->second.values().array() = b2 * v->second.values().array() + (1.0 - b2) * gv.square();
    p->second.values().array() -= config_.meta_lr * (m->second.values().array() / c1) /
                                  ((v->second.values().array() / c2).sqrt() + config_.epsilon);
  }
}

TrainResult meta_train(const ParamSet& theta0, const EpisodeSource& episodes, const InnerConfig& inner,
                       const OuterConfig& outer, const WeightSchedule& schedule, std::uint64_t seed,
                       const LossFn& loss_fn, const std::function<void(const RunRecord&)>& on_record,
                       int threads) {
  inner.validate();
  outer.validate();
  if (schedule.n_steps() != inner.n_target_losses()) {
    throw ContractError("schedule covers " + std::to_string(schedule.n_steps()) + " steps, expected " +
                        std::to_string(inner.n_target_losses()));
  }
  TrainResult result;
  result.params = theta0;
  OuterOptimizer optimizer(outer);
  Fnv stream{0xcbf29ce484222325ULL};
  for (long t = 0; t < outer.n_outer_iters; ++t) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Episode> batch;
    batch.reserve(static_cast<std::size_t>(outer.meta_batch_size));
    for (int slot = 0; slot < outer.meta_batch_size; ++slot) {
      batch.push_back(episodes(t, slot));
      stream.value(episode_digest(batch.back()));
    }
    try {
      OuterGradient g = outer_grad(result.params, batch, inner, schedule, t, outer.mode, loss_fn,
                                   derive_seed(seed, {static_cast<std::uint64_t>(t)}), threads);
      optimizer.step(result.params, g.grad);
      if (!result.params.all_finite()) {
        throw DivergenceError("non-finite parameters after outer step " + std::to_string(t), t);
      }
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      RunRecord rec{t, g.loss, std::move(g.step_losses), std::move(g.weights), ms};
      if (on_record) on_record(rec);
      result.records.push_back(std::move(rec));
    } catch (const DivergenceError& e) {
      result.divergence = DivergenceError("outer iteration " + std::to_string(t) + ": " + e.what(), t, e.episode());
      break;
    }
  }
  result.episode_hash = stream.h;
  return result;
}

ParamSet fine_tune(const ParamSet& theta, const Batch& train_data, const FineTuneConfig& config,
                   const LossFn& loss_fn) {
  if (config.epochs < 1) throw ContractError("fine_tune: epochs must be at least 1");
  if (config.batch_size < 1) throw ContractError("fine_tune: batch size must be at least 1");
  const Index n = batch_rows(train_data);
  ParamSet params = theta;
  Rng rng(config.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    }
    for (Index first = 0; first < n; first += config.batch_size) {
      const Index last = std::min<Index>(n, first + config.batch_size);
      std::span<const Index> rows(order.data() + first, static_cast<std::size_t>(last - first));
      const Batch mb = select_rows(train_data, rows);
      auto [loss, grad] =
          loss_and_grad(params, mb, loss_fn, {true, derive_seed(config.seed, {static_cast<std::uint64_t>(step)})});
      check_finite(loss, "fine-tuning loss", step);
      params = sgd_step(params, grad, config.lr);
      ++step;
    }
  }
  return params;
}

}  // namespace msl
