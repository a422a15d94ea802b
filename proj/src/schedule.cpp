#include <algorithm>
#include <cmath>
#include <string>

#include "msl/meta.hpp"

namespace msl {

WeightSchedule::WeightSchedule(int n_steps, double decay_per_iter, double floor)
    : n_steps_(n_steps), decay_(decay_per_iter), floor_(floor) {
  if (n_steps < 1) throw ConfigError("schedule: number of steps must be at least 1");
  if (!(decay_per_iter >= 0.0) || !std::isfinite(decay_per_iter)) {
    throw ConfigError("schedule: decay must be a non-negative finite number");
  }
  if (!(floor > 0.0 && floor <= 1.0 / n_steps)) {
    throw ConfigError("schedule: floor must lie in (0, 1/N], got " + std::to_string(floor));
  }
}

WeightSchedule WeightSchedule::annealed(int n_steps, long n_outer_iters) {
  if (n_steps < 1) throw ConfigError("schedule: number of steps must be at least 1");
  const double decay =
      n_outer_iters > 0 ? 1.0 / (0.8 * static_cast<double>(n_outer_iters) * n_steps) : 0.0;
  return WeightSchedule(n_steps, decay, 0.03 / n_steps);
}

WeightSchedule WeightSchedule::final_only(int n_steps) {
  if (n_steps < 1) throw ConfigError("schedule: number of steps must be at least 1");
  WeightSchedule s;
  s.n_steps_ = n_steps;
  s.final_only_ = true;
  return s;
}

std::vector<double> WeightSchedule::weights_at(long t) const {
  if (t < 0) throw ContractError("weights_at: iteration must be non-negative");
  if (final_only_) return one_hot_last(n_steps_);
  const auto n = static_cast<std::size_t>(n_steps_);
  std::vector<double> w(n);
  const double early = std::max(floor_, 1.0 / n_steps_ - static_cast<double>(t) * decay_);
  double early_sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    w[i] = early;
    early_sum += early;
  }
  w[n - 1] = 1.0 - early_sum;
  return w;
}

std::vector<double> one_hot_last(int n) {
  if (n < 1) throw ContractError("one_hot_last: n must be at least 1");
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  w.back() = 1.0;
  return w;
}

}  // namespace msl
