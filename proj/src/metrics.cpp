#include "msl/metrics.hpp"

#include <cmath>

namespace msl {

CurveStats curve_stats(std::span<const double> losses, int window, std::optional<double> threshold) {
  if (losses.size() < 2) throw ContractError("curve_stats: need at least 2 records");
  if (window < 2) throw ContractError("curve_stats: window must be at least 2");
  const std::size_t n = losses.size();
  const auto w = static_cast<std::size_t>(window);
  CurveStats s;

  double abs_sum = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const double d = losses[t + 1] - losses[t];
    abs_sum += std::abs(d);
    s.max_spike = std::max(s.max_spike, d);
  }
  s.mean_abs_successive_diff = abs_sum / static_cast<double>(n - 1);

  // a curve shorter than one window is treated as a single window
  const std::size_t n_windows = std::max<std::size_t>(1, n / w);
  const std::size_t span_len = n < w ? n : w;
  double std_sum = 0.0;
  for (std::size_t k = 0; k < n_windows; ++k) {
    const auto chunk = losses.subspan(k * span_len, span_len);
    // shifted by the first value
    const double x0 = chunk.front();
    double mu = 0.0;
    for (double x : chunk) mu += x - x0;
    mu /= static_cast<double>(span_len);
    double var = 0.0;
    for (double x : chunk) var += (x - x0 - mu) * (x - x0 - mu);
    std_sum += std::sqrt(var / static_cast<double>(span_len));
  }
  s.windowed_std = std_sum / static_cast<double>(n_windows);

  s.auc = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);

  if (threshold) {
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t first = t + 1 >= w ? t + 1 - w : 0;
      const double trailing = std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(first),
                                              losses.begin() + static_cast<std::ptrdiff_t>(t + 1), 0.0) /
                              static_cast<double>(t + 1 - first);
      if (trailing < *threshold) {
        s.iters_to_threshold = static_cast<long>(t);
        break;
      }
    }
  }
  return s;
}

CurveStats curve_stats(std::span<const RunRecord> records, int window, std::optional<double> threshold) {
  std::vector<double> losses;
  losses.reserve(records.size());
  for (const RunRecord& r : records) losses.push_back(r.outer_loss);
  return curve_stats(losses, window, threshold);
}

}  // namespace msl
