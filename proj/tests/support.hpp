#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "msl/autodiff.hpp"
#include "msl/random.hpp"

namespace msl::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// |a - b| within the absolute floor, or within the relative tolerance of the larger magnitude.
inline bool grad_close(double a, double b, double rel = 1e-4, double floor = 1e-7) {
  const double diff = std::abs(a - b);
  if (diff <= floor) return true;
  return diff <= rel * std::max(std::abs(a), std::abs(b));
}

using LeafFn = std::function<Var(Recording&, const std::vector<Var>&)>;

struct GradCheck {
  bool ok = true;
  double worst_rel = 0.0;
  std::string detail;
};

/// Compares backward() against central differences for every entry of every input.
inline GradCheck check_gradients(const LeafFn& fn, const std::vector<Tensor>& inputs, double step = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Recording rec;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(rec.leaf(t, true));
    const GradStore grads = rec.backward(fn(rec, leaves));
    for (const Var& v : leaves) analytic.push_back(grads.at(v));
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Recording rec;
    std::vector<Var> leaves;
    for (const Tensor& t : xs) leaves.push_back(rec.leaf(t, false));
    return fn(rec, leaves).item();
  };
  GradCheck out;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + step;
      const double up = eval(work);
      work[k][i] = x0 - step;
      const double down = eval(work);
      work[k][i] = x0;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      if (scale > 0.0) out.worst_rel = std::max(out.worst_rel, std::abs(a - numeric) / scale);
      if (!grad_close(a, numeric)) {
        out.ok = false;
        out.detail = "input " + std::to_string(k) + " entry " + std::to_string(i) + ": backward " +
                     std::to_string(a) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Reduces a tensor-valued op to a scalar with fixed random weights.
inline Var weighted_sum(Recording& rec, const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, rec.constant(random_tensor(y.shape(), rng))));
}

}  // namespace msl::test
