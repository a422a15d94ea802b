#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "msl/errors.hpp"

namespace msl {

/// Metrics of one outer iteration.
struct RunRecord {
  long outer_iter = 0;
  double outer_loss = 0.0;
  std::vector<double> per_step_losses;
  std::vector<double> weights;
  double wall_ms = 0.0;
};

/// Unit-cost Levenshtein distance, two-row dynamic program.
template <typename Token>
std::size_t edit_distance(std::span<const Token> a, std::span<const Token> b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Edit distance over reference length; can exceed one.
template <typename Token>
double cer(std::span<const Token> reference, std::span<const Token> hypothesis) {
  if (reference.empty()) throw ContractError("cer: empty reference");
  return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

template <typename Token>
double cer(const std::vector<Token>& reference, const std::vector<Token>& hypothesis) {
  return cer(std::span<const Token>(reference), std::span<const Token>(hypothesis));
}

/// Shape statistics of a loss curve.
struct CurveStats {
  double mean_abs_successive_diff = 0.0;
  double windowed_std = 0.0;  // mean population std over consecutive non-overlapping windows
  double max_spike = 0.0;     // largest upward step, zero if none
  double auc = 0.0;           // mean loss over the run
  std::optional<long> iters_to_threshold;  // first index whose trailing-window mean is below the threshold
};

CurveStats curve_stats(std::span<const double> losses, int window, std::optional<double> threshold = std::nullopt);
CurveStats curve_stats(std::span<const RunRecord> records, int window,
                       std::optional<double> threshold = std::nullopt);

}  // namespace msl
